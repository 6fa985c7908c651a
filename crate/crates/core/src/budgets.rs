//! Engineering budgets: proximity-effect design rules for the normal-metal
//! links, bias-line coupling and filtering, flux-noise sidebands, and the
//! cryostat heat load of the bias lines.

use serde::Serialize;

use crate::constants::{boltzmann, electron_charge, hbar, mu0, reduced_flux_quantum};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Reactance 2 pi f L of a bias-line filter inductor.
pub fn bias_filter_impedance<T: Real>(inductance: T, frequency_hz: T) -> T {
    T::TAU() * frequency_hz * inductance
}

/// Current induced in a SQUID loop by a bias current I_s,
/// (2 pi / (10 p)) (M_A / M_a) I_s.
pub fn induced_current<T: Real>(participation: T, mutual_ratio: T, bias_current: T) -> Result<T> {
    if !(participation > T::zero()) {
        return Err(Error::domain("participation ratio must be positive"));
    }
    Ok(T::TAU() / (T::lit(10.0) * participation) * mutual_ratio * bias_current)
}

/// Leading-order field of a shielded (quadrupole) bias line,
/// (mu0 I / 2 pi r) (eps / r)^2.
pub fn quadrupole_field<T: Real>(current: T, r: T, eps: T) -> Result<T> {
    if !(eps > T::zero() && r > eps) {
        return Err(Error::domain("expansion invalid: need r > eps > 0"));
    }
    Ok(mu0::<T>() * current / (T::TAU() * r) * (eps / r) * (eps / r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalMetalFilm<T> {
    pub thickness: T,
    /// Ohm per square
    pub sheet_resistance: T,
    pub squares_in_parallel: T,
    pub mean_free_path: T,
    pub fermi_velocity: T,
    pub inelastic_length: T,
    pub temperature: T,
    pub link_length: T,
}

impl Default for NormalMetalFilm<f64> {
    fn default() -> Self {
        // 225 nm gold at 300 mK
        Self {
            thickness: 225e-9,
            sheet_resistance: 60e-3,
            squares_in_parallel: 11.0,
            mean_free_path: 600e-9,
            fermi_velocity: 1.4e6,
            inelastic_length: 2e-6,
            temperature: 0.3,
            link_length: 5e-6,
        }
    }
}

impl<T: Real> NormalMetalFilm<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.thickness,
            self.sheet_resistance,
            self.squares_in_parallel,
            self.mean_free_path,
            self.fermi_velocity,
            self.inelastic_length,
            self.temperature,
            self.link_length,
        ];
        if all.iter().any(|v| !(*v > T::zero())) {
            return Err(Error::domain("film parameters must be positive"));
        }
        Ok(())
    }

    /// Resistance of the parallel squares of one link.
    pub fn film_resistance(&self) -> T {
        self.sheet_resistance / self.squares_in_parallel
    }

    /// The dirty-limit treatment needs the mean free path below the clean length.
    pub fn is_dirty_limit(&self) -> bool {
        coherence_lengths(self).map(|(xc, _)| self.mean_free_path < xc).unwrap_or(false)
    }
}

/// Clean-limit hbar v_F / (2 pi k_B T) and dirty-limit sqrt(l_n xi_c / 3).
pub fn coherence_lengths<T: Real>(film: &NormalMetalFilm<T>) -> Result<(T, T)> {
    if !(film.temperature > T::zero()) {
        return Err(Error::domain("temperature must be positive"));
    }
    let xc = hbar::<T>() * film.fermi_velocity / (T::TAU() * boltzmann::<T>() * film.temperature);
    let xd = (film.mean_free_path * xc / T::lit(3.0)).sqrt();
    Ok((xc, xd))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnsLink<T> {
    pub critical_current: T,
    pub josephson_energy: T,
    pub resistance: T,
    pub lr_time: T,
}

/// Proximity-coupled link: critical current, Josephson energy, resistance,
/// and the L/R time with an array of inductance `array_inductance`.
/// The sheet resistance stands in for R_n in the critical current.
pub fn sns_link<T: Real>(film: &NormalMetalFilm<T>, array_inductance: T) -> Result<SnsLink<T>> {
    film.validate()?;
    let (_, xd) = coherence_lengths(film)?;
    let l = film.link_length;
    if !(l > xd) {
        return Err(Error::domain("formula out of validity range: link length must exceed the coherence length"));
    }
    let kt = boltzmann::<T>() * film.temperature;
    let r = xd / l;
    let i_n = T::TAU() * kt / (film.sheet_resistance * electron_charge::<T>())
        * r
        * r
        * (-l / xd).exp()
        * (-l / film.inelastic_length).exp();
    let ej = reduced_flux_quantum::<T>() * i_n;
    let res = film.sheet_resistance * (-ej / kt).exp();
    Ok(SnsLink { critical_current: i_n, josephson_energy: ej, resistance: res, lr_time: array_inductance / res })
}

/// Johnson current noise 4 k_B T / Z0 (A^2/Hz).
pub fn johnson_noise_current<T: Real>(temperature: T, z0: T) -> Result<T> {
    if !(temperature >= T::zero()) {
        return Err(Error::domain("temperature must be non-negative"));
    }
    Ok(T::lit(4.0) * boltzmann::<T>() * temperature / z0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoisePhotons<T> {
    pub photons: T,
    pub amplitude_noise_fraction: T,
    pub amplitude_noise: T,
    pub phase_noise: T,
}

/// Added noise photons from bias-current amplitude and phase noise on the
/// gradiometric drive. Derivatives are of |S21| with respect to the drive
/// current and drive phase.
#[allow(clippy::too_many_arguments)]
pub fn added_noise_photons<T: Real>(
    ds21_dig: T,
    ds21_dphi: T,
    drive_current: T,
    signal_current_1db: T,
    temperature: T,
    z0: T,
    omega_p: T,
) -> Result<NoisePhotons<T>> {
    if !(drive_current > T::zero()) {
        return Err(Error::domain("drive current must be positive"));
    }
    let si = johnson_noise_current(temperature, z0)?;
    let a = ds21_dig * signal_current_1db;
    let p = ds21_dphi * signal_current_1db / drive_current;
    let s_an = a * a * si;
    let s_pn = p * p * si;
    let tot = s_an + s_pn;
    let photons = tot / (T::lit(2.0) * hbar::<T>() * omega_p / z0);
    let frac = if tot > T::zero() { s_an / tot } else { T::zero() };
    Ok(NoisePhotons { photons, amplitude_noise_fraction: frac, amplitude_noise: s_an, phase_noise: s_pn })
}

/// Signal current amplitude for a given input power, sqrt(2 P / Z0). The
/// conversion is a convention; callers may supply their own current.
pub fn signal_current_from_power<T: Real>(power: T, z0: T) -> T {
    (T::lit(2.0) * power / z0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CryostatStage<T> {
    pub temperature: T,
    /// Attenuation between the previous stage and this one (dB).
    pub attenuation_into_stage: T,
    pub bias_current_at_stage: T,
    pub effective_resistance: T,
    /// W; infinite for room temperature
    pub cooling_power: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageLoad<T> {
    pub temperature: T,
    pub bias_current: T,
    pub heat_load: T,
    /// Power burned in the attenuator feeding this stage.
    pub attenuator_dissipation: T,
    pub cooling_power: T,
    pub margin: T,
    pub exceeds_cooling_power: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerBudget<T> {
    pub stages: Vec<StageLoad<T>>,
    pub total_heat_load: T,
    pub any_exceeded: bool,
}

/// Heat load per stage, I^2 R_eff, plus the worst-case attenuator
/// dissipation computed from the attenuation schedule.
pub fn power_budget<T: Real>(stages: &[CryostatStage<T>]) -> Result<PowerBudget<T>> {
    if stages.is_empty() {
        return Err(Error::domain("power budget needs at least one stage"));
    }
    for w in stages.windows(2) {
        if !(w[1].temperature < w[0].temperature) {
            return Err(Error::domain("stage temperatures must decrease down the chain"));
        }
    }
    let mut out = Vec::with_capacity(stages.len());
    let mut total = T::zero();
    let mut any = false;
    let mut incoming: Option<T> = None;
    for s in stages {
        if !(s.attenuation_into_stage >= T::zero()) {
            return Err(Error::domain("attenuation must be non-negative"));
        }
        let heat = s.bias_current_at_stage * s.bias_current_at_stage * s.effective_resistance;
        let att = match incoming {
            Some(p) => p * (T::one() - T::lit(10.0).powf(-s.attenuation_into_stage / T::lit(10.0))),
            None => T::zero(),
        };
        incoming = Some(heat);
        let margin = s.cooling_power - heat;
        let exceeded = margin < T::zero();
        any = any || exceeded;
        total = total + heat;
        out.push(StageLoad {
            temperature: s.temperature,
            bias_current: s.bias_current_at_stage,
            heat_load: heat,
            attenuator_dissipation: att,
            cooling_power: s.cooling_power,
            margin,
            exceeds_cooling_power: exceeded,
        });
    }
    Ok(PowerBudget { stages: out, total_heat_load: total, any_exceeded: any })
}

/// Bias chain thermalized at 4 K with twisted pairs to the mixing chamber.
pub fn default_bias_chain() -> Vec<CryostatStage<f64>> {
    vec![
        CryostatStage {
            temperature: 300.0,
            attenuation_into_stage: 0.0,
            bias_current_at_stage: 1e-1,
            effective_resistance: 50.0,
            cooling_power: f64::INFINITY,
        },
        CryostatStage {
            temperature: 4.0,
            attenuation_into_stage: 40.0,
            bias_current_at_stage: 1e-3,
            effective_resistance: 50.0,
            cooling_power: 0.75,
        },
        CryostatStage {
            temperature: 0.05,
            attenuation_into_stage: 20.0,
            bias_current_at_stage: 1e-4,
            effective_resistance: 10e-3,
            cooling_power: 50e-6,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{squid_array_inductance, SquidArraySpec};
    use proptest::prelude::*;

    #[test]
    fn filter_impedances() {
        assert!((bias_filter_impedance(20e-9f64, 120e6) - 15.08).abs() < 0.01);
        assert!((bias_filter_impedance(20e-9f64, 4e9) - 502.65).abs() < 0.01);
        assert_eq!(bias_filter_impedance(20e-9, 0.0), 0.0);
    }

    #[test]
    fn induced_current_examples() {
        assert!((induced_current(1.0f64, 1.0, 1e-6).unwrap() - 0.628_318_5e-6).abs() < 1e-12);
        assert!((induced_current(2.0f64, 1.0, 1e-6).unwrap() - 0.314_159_3e-6).abs() < 1e-12);
        assert_eq!(induced_current(1.0, 0.0, 1e-6).unwrap(), 0.0);
        assert!(induced_current(0.0, 1.0, 1e-6).is_err());
    }

    #[test]
    fn quadrupole_suppression() {
        let i = 1e-3;
        let dip = mu0::<f64>() * i / (std::f64::consts::TAU * 175e-6);
        let q = quadrupole_field(i, 175e-6, 17.5e-6).unwrap();
        assert!((q / dip - 1e-2).abs() < 1e-12);
        let q2 = quadrupole_field(i, 175e-6, 8.75e-6).unwrap();
        assert!((q2 / q - 0.25).abs() < 1e-12);
        assert_eq!(quadrupole_field(0.0, 175e-6, 17.5e-6).unwrap(), 0.0);
        assert!(quadrupole_field(i, 1e-6, 2e-6).is_err());
    }

    #[test]
    fn gold_coherence_lengths() {
        let film = NormalMetalFilm::default();
        let (xc, xd) = coherence_lengths(&film).unwrap();
        assert!((xc - 5.7e-6).abs() < 0.05e-6, "{xc}");
        assert!((xd - 1.06e-6).abs() < 0.01e-6, "{xd}");
        assert!(film.is_dirty_limit());
        let hot = NormalMetalFilm { temperature: 0.6, ..film };
        let (xc2, xd2) = coherence_lengths(&hot).unwrap();
        assert!((xc2 / xc - 0.5).abs() < 1e-12);
        assert!((xd2 / xd - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn sns_link_design_rule() {
        let film = NormalMetalFilm::default();
        let (_, xd) = coherence_lengths(&film).unwrap();
        let la = squid_array_inductance(&SquidArraySpec::default(), 0.0).unwrap();
        let link = sns_link(&NormalMetalFilm { link_length: 5.5 * xd, ..film }, la).unwrap();
        assert!(link.lr_time < 1.0);
        // long links decouple completely
        let long = sns_link(&NormalMetalFilm { link_length: 200e-6, ..film }, la).unwrap();
        assert!((long.resistance - film.sheet_resistance).abs() < 1e-12);
        assert!(sns_link(&NormalMetalFilm { link_length: 0.5 * xd, ..film }, la).is_err());
        // L/R strictly decreasing in the link length
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let l = xd * (1.05 + 0.25 * k as f64);
            let t = sns_link(&NormalMetalFilm { link_length: l, ..film }, la).unwrap().lr_time;
            assert!(t <= prev, "{k} {t} {prev}");
            prev = t;
        }
    }

    #[test]
    fn johnson_noise_examples() {
        assert!((johnson_noise_current(300.0f64, 50.0).unwrap() - 3.31e-22).abs() < 0.01e-22);
        assert_eq!(johnson_noise_current(0.0, 50.0).unwrap(), 0.0);
        let a = johnson_noise_current(10.0, 50.0).unwrap();
        assert!((johnson_noise_current(20.0f64, 50.0).unwrap() - 2.0 * a).abs() < 1e-35);
    }

    #[test]
    fn noise_photon_temperature_ratio() {
        let w = std::f64::consts::TAU * 4.5e9;
        let hot = added_noise_photons(3e4, 0.2, 1e-4, 9e-7, 300.0, 50.0, w).unwrap();
        let cold = added_noise_photons(3e4, 0.2, 1e-4, 9e-7, 7.0, 50.0, w).unwrap();
        assert!((cold.photons / hot.photons - 7.0 / 300.0).abs() < 1e-15);
        // anchored to 14 photons at room temperature
        assert!((14.0 * cold.photons / hot.photons - 0.3267).abs() < 1e-3);
        assert_eq!(added_noise_photons(0.0, 0.0, 1e-4, 9e-7, 300.0, 50.0, w).unwrap().photons, 0.0);
    }

    #[test]
    fn table_heat_loads() {
        let b = power_budget(&default_bias_chain()).unwrap();
        let loads: Vec<f64> = b.stages.iter().map(|s| s.heat_load).collect();
        assert!((loads[0] - 5e-1).abs() < 1e-12);
        assert!((loads[1] - 5e-5).abs() < 1e-16);
        assert!((loads[2] - 1e-10).abs() < 1e-20);
        assert!(!b.any_exceeded);
        assert_eq!(b.total_heat_load, loads.iter().sum::<f64>());
        // the schedule is consistent: 40 dB and 20 dB of current attenuation
        let chain = default_bias_chain();
        for w in chain.windows(2) {
            let ratio = w[1].bias_current_at_stage / w[0].bias_current_at_stage;
            assert!((20.0 * ratio.log10() + w[1].attenuation_into_stage).abs() < 1e-9);
        }
    }

    #[test]
    fn overloaded_stage_flagged() {
        let mut chain = default_bias_chain();
        chain[2].bias_current_at_stage = 1.0;
        let b = power_budget(&chain).unwrap();
        assert!(b.any_exceeded && b.stages[2].exceeds_cooling_power);
        assert!(power_budget::<f64>(&[]).is_err());
    }

    proptest! {
        #[test]
        fn photons_depend_only_on_products(a in 1e2f64..1e5, b in 0.01f64..1.0, ig in 1e-5f64..1e-3, i1 in 1e-8f64..1e-6, k in 0.1f64..10.0) {
            let w = 3e10;
            let x = added_noise_photons(a, b, ig, i1, 300.0, 50.0, w).unwrap();
            // scale the signal current by k and the derivatives by 1/k, the
            // drive current by k together with the phase derivative
            let y = added_noise_photons(a / k, b, ig * k, i1 * k, 300.0, 50.0, w).unwrap();
            prop_assert!((x.photons - y.photons).abs() <= 1e-9 * x.photons);
        }

        #[test]
        fn heat_load_scales_quadratically(i in 1e-6f64..1.0, r in 1e-3f64..100.0, k in 0.1f64..10.0) {
            let st = |i: f64, r: f64| CryostatStage { temperature: 1.0, attenuation_into_stage: 0.0, bias_current_at_stage: i, effective_resistance: r, cooling_power: 1.0 };
            let a = power_budget(&[st(i, r)]).unwrap().total_heat_load;
            let b = power_budget(&[st(k * i, r)]).unwrap().total_heat_load;
            let c = power_budget(&[st(i, k * r)]).unwrap().total_heat_load;
            prop_assert!((b / a - k * k).abs() < 1e-9 * k * k);
            prop_assert!((c / a - k).abs() < 1e-9 * k);
        }

        #[test]
        fn coherence_length_units(t in 0.05f64..4.0, k in 0.5f64..2.0) {
            let f = NormalMetalFilm { temperature: t, ..NormalMetalFilm::default() };
            let g = NormalMetalFilm { fermi_velocity: f.fermi_velocity * k, mean_free_path: f.mean_free_path * k, ..f };
            let (xc, xd) = coherence_lengths(&f).unwrap();
            let (yc, yd) = coherence_lengths(&g).unwrap();
            prop_assert!((yc / xc - k).abs() < 1e-12);
            prop_assert!((yd / xd - k).abs() < 1e-12);
        }
    }
}
