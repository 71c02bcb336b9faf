use narrinf_core::dataset::{CovariateMatrix, OutcomeVector};
use narrinf_core::exposure::ExposureTensor;
use narrinf_core::graph::SourceVector;
use narrinf_core::inference::{
    diagnostics, fit, gibbs_sweep, log_posterior, ChainState, FitData, McmcConfig, PriorSpec,
    ProposalScales,
};
use narrinf_core::model::{Design, LatentEffects, ModelConfig, ModelParams};
use narrinf_core::simulate::{simulate_dataset, SimulationSpec};
use narrinf_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, InverseGamma, Normal};
use statrs::function::gamma::ln_gamma;

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn small_data(seed: u64, n: usize) -> FitData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = SourceVector::new((0..n).map(|_| rng.random_bool(0.3)).collect());
    let s = ExposureTensor::from_rows(vec![(0..n).map(|_| rng.random_range(0.0..2.0)).collect()])
        .unwrap();
    let x = CovariateMatrix::from_column("x", (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let y = OutcomeVector((0..n).map(|_| rng.random_range(0..6)).collect());
    FitData::new(Design::new(z, s, x).unwrap(), y, ModelConfig::default()).unwrap()
}

fn empty_data() -> FitData {
    let design = Design::new(
        SourceVector::zeros(0),
        ExposureTensor::from_rows(vec![vec![]]).unwrap(),
        CovariateMatrix::new(vec![], vec!["x".into()]).unwrap(),
    )
    .unwrap();
    FitData::new(design, OutcomeVector(vec![]), ModelConfig::default()).unwrap()
}

fn params(tau: f64, gamma: f64, beta: f64, mu: f64, sigma: f64) -> ModelParams {
    ModelParams {
        tau,
        gamma: vec![gamma],
        beta: vec![beta],
        mu,
        sigma_eps: sigma,
    }
}

fn calibration_data(seed: u64) -> FitData {
    let sim = simulate_dataset(&SimulationSpec::calibration(seed)).unwrap();
    FitData::from_dataset(&sim.dataset, ModelConfig::default()).unwrap()
}

#[test]
fn log_posterior_outside_support() {
    let data = small_data(1, 5);
    let eps = LatentEffects::zeros(5);
    let lp = log_posterior(&params(-1.0, 0.5, 0.0, 0.0, 1.0), &eps, &data, &PriorSpec::default());
    assert_eq!(lp, f64::NEG_INFINITY);
    let lp = log_posterior(&params(1.0, 1.5, 0.0, 0.0, 1.0), &eps, &data, &PriorSpec::default());
    assert_eq!(lp, f64::NEG_INFINITY);
}

#[test]
fn log_posterior_without_data_is_prior() {
    let data = empty_data();
    let prior = PriorSpec::default();
    let p = params(0.7, 0.2, -0.4, 1.1, 0.6);
    let eps = LatentEffects(vec![]);
    assert_eq!(log_posterior(&p, &eps, &data, &prior), prior.ln_density(&p, &eps));
}

#[test]
fn log_posterior_term_by_term() {
    let ln_norm = |x: f64, sd: f64| {
        -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - x * x / (2.0 * sd * sd)
    };
    for seed in 0..10 {
        let data = small_data(seed, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let p = params(
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.1..1.0),
        );
        let eps = LatentEffects((0..12).map(|_| rng.random_range(-0.5..0.5)).collect());

        let mut ll = 0.0;
        for i in 0..12 {
            let z = if data.design.z.get(i) { 1.0 } else { 0.0 };
            let s = data.design.exposure.get(1, i);
            let x = data.design.x.row(i)[0];
            let eta = p.tau * z + p.tau * p.gamma[0] * s + p.beta[0] * x + p.mu + eps.0[i];
            let y = data.y.0[i] as f64;
            ll += y * eta - eta.exp() - ln_gamma(y + 1.0);
        }
        let s2 = p.sigma_eps * p.sigma_eps;
        let mut prior = 2f64.ln() + ln_norm(p.tau, 10.0);
        prior += ln_norm(p.beta[0], 10.0) + ln_norm(p.mu, 10.0);
        prior += 2.0 * 1f64.ln() - ln_gamma(2.0) - 3.0 * s2.ln() - 1.0 / s2;
        prior += eps.0.iter().map(|&e| ln_norm(e, p.sigma_eps)).sum::<f64>();

        let got = log_posterior(&p, &eps, &data, &PriorSpec::default());
        assert!((got - (ll + prior)).abs() < 1e-10, "{got} vs {}", ll + prior);
    }
}

#[test]
fn zero_scale_sweep_keeps_state() {
    let data = small_data(2, 8);
    let state = ChainState {
        params: params(0.8, 0.3, 0.2, -0.1, 0.5),
        eps: LatentEffects(vec![0.1, -0.2, 0.0, 0.3, 0.05, -0.1, 0.2, 0.0]),
    };
    let scales = ProposalScales::uniform(4, 8, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (next, acc) = gibbs_sweep(state.clone(), &data, &PriorSpec::default(), &scales, &mut rng);
    assert_eq!(next.params.coefficients(), state.params.coefficients());
    assert_eq!(next.eps, state.eps);
    assert!(acc.coef.iter().all(|&a| a));
    assert!(acc.eps.iter().all(|&a| a));
}

#[test]
fn sweep_is_deterministic() {
    let data = small_data(3, 10);
    let state = ChainState {
        params: params(0.5, 0.5, 0.0, 0.0, 0.4),
        eps: LatentEffects::zeros(10),
    };
    let scales = ProposalScales::uniform(4, 10, 0.3);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        gibbs_sweep(state.clone(), &data, &PriorSpec::default(), &scales, &mut rng)
    };
    assert_eq!(run(), run());
}

#[test]
fn sigma_draw_is_conjugate_inverse_gamma() {
    let data = small_data(4, 20);
    let eps = LatentEffects((0..20).map(|i| 0.05 * (i as f64 - 10.0)).collect());
    let sum_sq: f64 = eps.0.iter().map(|e| e * e).sum();
    let state = ChainState {
        params: params(0.5, 0.5, 0.1, 0.0, 0.3),
        eps,
    };
    let scales = ProposalScales::uniform(4, 20, 0.0);
    let prior = PriorSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            let (next, _) = gibbs_sweep(state.clone(), &data, &prior, &scales, &mut rng);
            next.params.sigma_eps.powi(2)
        })
        .collect();
    let ig = InverseGamma::new(2.0 + 10.0, 1.0 + 0.5 * sum_sq).unwrap();
    let d = ks_statistic(draws, |x| ig.cdf(x));
    assert!(d < 0.02, "KS {d}");
}

#[test]
fn fit_rejects_bad_schedule() {
    let data = small_data(5, 6);
    let cfg = McmcConfig {
        n_iters: 100,
        burn_in: 100,
        ..Default::default()
    };
    assert!(matches!(
        fit(&data, &PriorSpec::default(), &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn fit_draw_count_and_determinism() {
    let data = small_data(6, 15);
    let cfg = McmcConfig {
        n_chains: 3,
        n_iters: 400,
        burn_in: 150,
        thin: 5,
        seed: 9,
        ..Default::default()
    };
    let a = fit(&data, &PriorSpec::default(), &cfg).unwrap();
    let b = fit(&data, &PriorSpec::default(), &cfg).unwrap();
    assert_eq!(a.n_draws(), 3 * (400 - 150) / 5);
    assert_eq!(a, b);
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    a.write_csv(&mut csv_a).unwrap();
    b.write_csv(&mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
    for d in a.draws() {
        assert!(d.params.tau >= 0.0);
        assert!(d.params.gamma.iter().all(|g| (0.0..=1.0).contains(g)));
        assert!(d.params.sigma_eps >= 0.0);
        assert!(d.eps.as_ref().unwrap().0.iter().all(|e| e.is_finite()));
    }
}

#[test]
fn posterior_csv_round_trip() {
    let data = small_data(7, 5);
    let cfg = McmcConfig {
        n_chains: 2,
        n_iters: 60,
        burn_in: 20,
        thin: 2,
        ..Default::default()
    };
    let s = fit(&data, &PriorSpec::default(), &cfg).unwrap();
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let back = narrinf_core::inference::PosteriorSamples::read_csv(&buf[..]).unwrap();
    assert_eq!(back.n_draws(), s.n_draws());
    for (a, b) in s.draws().zip(back.draws()) {
        assert_eq!(a.params, b.params);
    }
}

#[test]
fn flat_likelihood_recovers_truncated_prior() {
    let data = empty_data();
    let cfg = McmcConfig {
        n_chains: 4,
        n_iters: 5000 + 1250 * 20,
        burn_in: 5000,
        thin: 20,
        seed: 1,
        ..Default::default()
    };
    let s = fit(&data, &PriorSpec::default(), &cfg).unwrap();
    let taus: Vec<f64> = s.draws().map(|d| d.params.tau).collect();
    assert_eq!(taus.len(), 5000);
    let half = Normal::new(0.0, 10.0).unwrap();
    let d = ks_statistic(taus, |x| 2.0 * half.cdf(x) - 1.0);
    assert!(d < 0.03, "KS {d}");
}

#[test]
fn calibration_fit_mixes() {
    let data = calibration_data(0);
    let s = fit(&data, &PriorSpec::default(), &McmcConfig::default()).unwrap();
    let diag = diagnostics(&s);
    for p in &diag.params {
        assert!(p.rhat.unwrap() < 1.05, "{} R̂ {:?}", p.name, p.rhat);
    }
    for (name, rate) in &diag.acceptance_rates {
        assert!(*rate > 0.1 && *rate < 0.6, "{name} acceptance {rate}");
    }
}

#[test]
fn quadrupled_outcomes_raise_baseline() {
    let data = calibration_data(1);
    let mut scaled = data.clone();
    scaled.y = OutcomeVector(data.y.0.iter().map(|y| 4 * y).collect());
    let cfg = McmcConfig {
        n_iters: 2000,
        burn_in: 1000,
        ..Default::default()
    };
    let mu = |d: &FitData| {
        let s = fit(d, &PriorSpec::default(), &cfg).unwrap();
        diagnostics(&s).get("mu").unwrap().mean
    };
    assert!(mu(&scaled) > mu(&data));
}
