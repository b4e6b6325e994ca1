//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::Instant;

use bridgelab::contraction::{default_grid, dobrushin, lip_norm_weights, lyapunov_search, weighted_decay_varying};
use bridgelab::discrete::{self, DiscreteModel, StoppingRule};
use bridgelab::divergences::{kantorovich_discrete, phi_entropy, relative_entropy, relative_entropy_matrix, weighted_discrete_cost, weighted_tv, DiscreteMeasure, PhiFunction};
use bridgelab::gaussian::{self, GaussianInstance, GaussianModel};
use bridgelab::harness::{self, generate_instance, lyapunov_certificate_input, ExperimentConfig, Instance};
use bridgelab::matcore::{spectral_norm, SpdMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn discrete(profile: &str, size: [usize; 2], seed: u64, param: Option<f64>) -> DiscreteModel {
    match generate_instance(profile, &size, seed, param).unwrap() {
        Instance::Discrete(m) => m,
        _ => unreachable!(),
    }
}

fn gaussian_instance(d: usize, seed: u64) -> GaussianModel {
    match generate_instance("gaussian-random-spd", &[d], seed, None).unwrap() {
        Instance::Gaussian(m) => m,
        _ => unreachable!(),
    }
}

fn ladder_instances() -> Vec<DiscreteModel> {
    (0..20).map(|s| discrete("bounded", [5, 7], 1000 + s, Some(3.0))).collect()
}

fn entropy_ladder() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut ok = true;
    for m in ladder_instances() {
        let its = discrete::run_iterates(&m, 51).unwrap();
        let b = discrete::solve_bridge(&m, StoppingRule::default()).unwrap();
        ok &= b.converged;
        let rep = discrete::entropy_ladder(&m, &its, &b.bridge).unwrap();
        ok &= rep.rows.iter().all(|r| !r.infinite);
        worst = worst.max(rep.max_residual());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(ok && worst <= 1e-9 && secs < 5.0, format!("max residual {worst:.2e} (tol 1e-9) over 20 instances, n ≤ 50, {secs:.2}s (limit 5s)"))
}

fn linear_decay() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for m in ladder_instances() {
        let its = discrete::run_iterates(&m, 201).unwrap();
        let b = discrete::solve_bridge(&m, StoppingRule::default()).unwrap();
        let h = relative_entropy_matrix(&b.bridge, &its[0].joint_even);
        for it in &its {
            let term = relative_entropy(m.eta().weights(), it.pi_even.weights()) + relative_entropy(m.mu().weights(), it.pi_odd.weights());
            worst = worst.max((it.step + 1) as f64 * term - h);
        }
    }
    outcome(worst <= 1e-8, format!("max of (n+1)[H(η|π_2n) + H(μ|π_2n+1)] − H(P_μη|P) = {worst:.2e} (tol 1e-8), n ≤ 200"))
}

fn geometric_rate() -> Outcome {
    let mut rows = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for seed in 0..10u64 {
        let size = if seed % 2 == 0 { [5, 7] } else { [8, 6] };
        let m = discrete("bounded", size, 2000 + seed, Some(2f64.ln()));
        ok &= m.epsilon_w() == 0.25;
        let its = discrete::run_iterates(&m, 60).unwrap();
        let rr = discrete::geometric_rate_report(&m, &its).unwrap();
        for r in rr.diagnostics.rows.iter().filter(|r| r.check.starts_with("geometric_")) {
            rows += 1;
            worst = worst.max(r.lhs);
            ok &= r.lhs <= 0.5625 + 1e-10;
        }
        for phi in ["kl", "tv", "hellinger"] {
            ok &= rr.diagnostics.rows.iter().any(|r| r.check == format!("geometric_{phi}"));
        }
    }
    outcome(ok, format!("ε_W = 0.25, max consecutive ratio {worst:.4} ≤ 0.5625 over {rows} ratios (KL, TV, Hellinger, both parities)"))
}

fn riccati_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for (i, d) in [1usize, 2, 3, 8].into_iter().enumerate() {
        let m = gaussian_instance(d, 3000 + i as u64);
        let p = gaussian::RiccatiProblem::from_model(&m).unwrap();
        let traj = gaussian::gaussian_trajectory(&m, 401).unwrap();
        let (mut ve, mut vo) = (traj[0].upsilon.clone(), traj[1].upsilon.clone());
        for s in &traj[2..] {
            let v = if s.is_even() {
                ve = p.apply(ve.as_sym()).unwrap();
                &ve
            } else {
                vo = p.apply_bar(vo.as_sym()).unwrap();
                &vo
            };
            worst = worst.max((s.upsilon.matrix() - v.matrix()).amax());
        }
    }
    let r = gaussian::riccati_fixed_point(&SpdMatrix::from_diagonal(&[1.0]).unwrap()).matrix()[(0, 0)];
    let golden_ok = (r - 0.6180339887).abs() <= 1e-9 && (r * r + r - 1.0).abs() < 1e-15;
    outcome(worst <= 1e-10 && golden_ok, format!("max |υ_n − Ricc^n| = {worst:.2e} (tol 1e-10), 200 steps, d ∈ {{1,2,3,8}}; golden r = {r:.12}"))
}

fn rate_instances() -> Vec<GaussianModel> {
    (0..10).map(|s| gaussian_instance(1 + s as usize % 3, 4000 + s)).collect()
}

fn riccati_rate() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    for m in rate_instances() {
        let b = gaussian::schrodinger_bridge_gaussian(&m).unwrap();
        let traj = gaussian::gaussian_trajectory(&m, 161).unwrap();
        let rr = gaussian::rate_report(&traj, &b, &m).unwrap();
        match rr.fit {
            Some(f) => {
                ok &= gaussian::slope_within(&f, rr.theoretical_slope);
                worst = worst.max((f.slope - rr.theoretical_slope) / rr.theoretical_slope.abs());
            }
            None => ok = false,
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(ok && secs < 10.0, format!("worst (fitted − θ)/|θ| = {worst:.3} (allowed 0.05), 10 instances d ≤ 3, {secs:.2}s (limit 10s)"))
}

fn contracting(m: &GaussianModel, target: f64) -> GaussianModel {
    let kappa = spectral_norm(&m.kernel.chi());
    let rho = m.mu.cov.spectral_norm() * m.eta.cov.spectral_norm();
    let mut inst: GaussianInstance = m.to_instance();
    let s = target / (kappa * rho.sqrt());
    inst.beta.iter_mut().for_each(|b| *b *= s);
    GaussianModel::from_instance(&inst).unwrap()
}

fn all_gaussian() -> Vec<GaussianModel> {
    let mut v = rate_instances();
    v.extend([1usize, 2, 3, 8].iter().enumerate().map(|(i, &d)| gaussian_instance(d, 3000 + i as u64)));
    v.extend((0..3).map(|d| gaussian_instance(d + 1, 5000 + d as u64)));
    v
}

fn bridge_transport() -> Outcome {
    let (mut em, mut ec) = (0.0f64, 0.0f64);
    let models = all_gaussian();
    let n = models.len();
    for m in models.iter().chain(models.iter().map(|m| contracting(m, 0.5)).collect::<Vec<_>>().iter()) {
        let b = gaussian::schrodinger_bridge_gaussian(m).unwrap();
        let p = gaussian::push_forward(&m.mu, &b.kernel).unwrap();
        em = em.max((&p.mean - &m.eta.mean).amax());
        ec = ec.max((p.cov.matrix() - m.eta.cov.matrix()).norm());
    }
    outcome(em <= 1e-10 && ec <= 1e-10, format!("mean error {em:.2e}, covariance error {ec:.2e} (Frobenius; tol 1e-10) on {} instances", 2 * n))
}

fn entropy_cross_check() -> Outcome {
    let mut worst = 0.0f64;
    for d in 1..=3usize {
        for seed in 0..3u64 {
            let m = gaussian_instance(d, 5000 + 10 * d as u64 + seed);
            let b = gaussian::schrodinger_bridge_gaussian(&m).unwrap();
            let traj = gaussian::gaussian_trajectory(&m, 40).unwrap();
            for s in traj.iter().filter(|s| s.is_even()) {
                let f = gaussian::bridge_entropy(s, &b, &m).unwrap();
                let o = gaussian::joint_entropy_oracle(s, &b, &m).unwrap();
                worst = worst.max((f - o).abs());
            }
        }
    }
    outcome(worst <= 1e-9, format!("max |formula − 2d-joint KL| = {worst:.2e} (tol 1e-9), d ∈ {{1,2,3}}, n ∈ 0..=20"))
}

fn envelope() -> Outcome {
    let mut ok = true;
    let (mut entropy_rows, mut w2_rows, mut contracting_count) = (0, 0, 0);
    let models = all_gaussian();
    let scaled: Vec<GaussianModel> = models.iter().take(6).map(|m| contracting(m, 0.6)).collect();
    for m in models.iter().chain(&scaled) {
        let b = gaussian::schrodinger_bridge_gaussian(m).unwrap();
        let traj = gaussian::gaussian_trajectory(m, 201).unwrap();
        let env = gaussian::envelope_report(m, &traj, &b).unwrap();
        ok &= !env.vacuous;
        for r in &env.diagnostics.rows {
            if r.check.starts_with("envelope") || r.check == "entropy_recurrence" {
                entropy_rows += 1;
                ok &= r.pass;
            }
        }
        if env.kappa * (env.rho * env.rho_bar).sqrt() < 1.0 {
            contracting_count += 1;
            let w2: Vec<_> = env.diagnostics.rows.iter().filter(|r| r.check.starts_with("w2_")).collect();
            ok &= !w2.is_empty() && w2.iter().all(|r| r.pass);
            ok &= w2.iter().any(|r| r.check == "w2_even") && w2.iter().any(|r| r.check == "w2_decay_even");
            w2_rows += w2.len();
        }
    }
    ok &= contracting_count >= 6;
    outcome(ok, format!("{entropy_rows} entropy envelope rows (n ≤ 100) and {w2_rows} W2 rows on {contracting_count} instances with κ√(ρρ̄) < 1"))
}

fn lyapunov() -> Outcome {
    let m = discrete("bounded", [10, 10], 9, None);
    let its = discrete::run_iterates(&m, 21).unwrap();
    let input = lyapunov_certificate_input(&m, &its, 0.25);
    let cert = match lyapunov_search(&input, &default_grid()).unwrap() {
        Ok(c) => c,
        Err(f) => return outcome(false, format!("no certificate: best ϱ = {:.4} at a = {:.3e}", f.best_rho, f.best_a)),
    };
    let g_a: Vec<f64> = input.g.iter().map(|g| 0.5 + cert.a * g).collect();
    let mut worst = f64::NEG_INFINITY;
    let mut pairs_checked = 0;
    for (i, j) in [(0usize, 9usize), (3, 7), (5, 1)] {
        let decay = weighted_decay_varying(&input.pairs[..20], &DiscreteMeasure::dirac(10, i), &DiscreteMeasure::dirac(10, j), &g_a).unwrap();
        for (n, d) in decay.iter().enumerate() {
            worst = worst.max(d - cert.rho.powi(2 * n as i32) * decay[0]);
        }
        pairs_checked += 1;
    }
    let verified = cert.verify(&input).unwrap();
    outcome(cert.rho < 1.0 && worst <= 1e-10 && verified, format!("a = {:.3e}, ϱ = {:.4}; max decay excess {worst:.2e} (tol 1e-10), n ≤ 20, {pairs_checked} start pairs", cert.a, cert.rho))
}

fn random_kernel(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut k = DMatrix::from_fn(r, c, |_, _| if rng.random::<f64>() < 0.15 { 0.0 } else { rng.random::<f64>() });
    for i in 0..r {
        if k.row(i).sum() == 0.0 {
            k[(i, 0)] = 1.0;
        }
        let s = k.row(i).sum();
        for j in 0..c {
            k[(i, j)] /= s;
        }
    }
    k
}

fn random_measure(n: usize, rng: &mut ChaCha8Rng) -> DiscreteMeasure {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    DiscreteMeasure::new(w.into_iter().map(|x| x / s).collect()).unwrap()
}

/// max over row pairs and subsets A of |K(i, A) − K(j, A)|
fn dobrushin_oracle(k: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for i in 0..k.nrows() {
        for j in 0..k.nrows() {
            for mask in 0u32..(1 << k.ncols()) {
                let d: f64 = (0..k.ncols()).filter(|c| mask >> c & 1 == 1).map(|c| k[(i, c)] - k[(j, c)]).sum();
                best = best.max(d.abs());
            }
        }
    }
    best
}

/// max over x1 ≠ x2 and f = ±h of |Kf(x1) − Kf(x2)| / (g(x1) + g(x2))
fn lip_oracle(k: &DMatrix<f64>, g: &[f64], h: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..k.nrows() {
        for j in 0..k.nrows() {
            if i == j {
                continue;
            }
            for mask in 0u32..(1 << k.ncols()) {
                let f = |c: usize| if mask >> c & 1 == 1 { h[c] } else { -h[c] };
                let d: f64 = (0..k.ncols()).map(|c| (k[(i, c)] - k[(j, c)]) * f(c)).sum();
                best = best.max(d.abs() / (g[i] + g[j]));
            }
        }
    }
    best
}

/// Minimum cost over the basic feasible solutions of the transportation polytope.
fn kantorovich_oracle(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = (a.len(), b.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        // drop the last column constraint, which is implied by the others
        let rows = m + n - 1;
        let mut sys = DMatrix::zeros(rows, k);
        for (col, &ci) in idx.iter().enumerate() {
            let (i, j) = cells[ci];
            sys[(i, col)] = 1.0;
            if j < n - 1 {
                sys[(m + j, col)] = 1.0;
            }
        }
        let rhs = DVector::from_iterator(rows, a.iter().copied().chain(b[..n - 1].iter().copied()));
        if let Some(x) = sys.clone().lu().solve(&rhs) {
            if (&sys * &x - &rhs).amax() < 1e-12 && x.iter().all(|v| *v >= -1e-13) {
                let c: f64 = idx.iter().zip(x.iter()).map(|(&ci, v)| cost[cells[ci]] * v.max(0.0)).sum();
                best = best.min(c);
            }
        }
        // next k-combination
        let mut p = k;
        while p > 0 && idx[p - 1] == cells.len() - k + p - 1 {
            p -= 1;
        }
        if p == 0 {
            break;
        }
        idx[p - 1] += 1;
        for q in p..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
    best
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let (mut ed, mut el, mut ek, mut count) = (0.0f64, 0.0f64, 0.0f64, 0);
    let mut kernels: Vec<DMatrix<f64>> = Vec::new();
    for r in 1..=4 {
        for c in 1..=4 {
            for _ in 0..6 {
                kernels.push(random_kernel(r, c, &mut rng));
            }
        }
    }
    // Sinkhorn kernels from small instances
    for seed in 0..4 {
        let m = discrete("bounded", [3 + seed as usize % 2, 4], 6100 + seed, Some(1.5));
        for it in discrete::run_iterates(&m, 3).unwrap() {
            kernels.push(it.kernel_even.clone());
            kernels.push(it.kernel_odd.clone());
        }
    }
    for k in &kernels {
        let (r, c) = k.shape();
        ed = ed.max((dobrushin(k).unwrap() - dobrushin_oracle(k)).abs());
        let g: Vec<f64> = (0..r).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect();
        let h: Vec<f64> = (0..c).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect();
        el = el.max((lip_norm_weights(k, &g, &h).unwrap() - lip_oracle(k, &g, &h)).abs());
        let cost = DMatrix::from_fn(r, c, |_, _| 3.0 * rng.random::<f64>());
        let (a, b) = (random_measure(r, &mut rng), random_measure(c, &mut rng));
        let t = kantorovich_discrete(&cost, &a, &b).unwrap();
        ek = ek.max((t.value - kantorovich_oracle(&cost, a.weights(), b.weights())).abs());
        if r == c {
            let wc = weighted_discrete_cost(&g);
            let t = kantorovich_discrete(&wc, &a, &b).unwrap();
            ek = ek.max((t.value - kantorovich_oracle(&wc, a.weights(), b.weights())).abs());
            ek = ek.max((t.value - weighted_tv(&a, &b, &g).unwrap()).abs());
        }
        count += 1;
    }
    let phis = [PhiFunction::Kl, PhiFunction::Tv, PhiFunction::Hellinger, PhiFunction::ChiSquare];
    let mut dpi_worst = f64::NEG_INFINITY;
    for i in 0..1000 {
        let phi = &phis[i % phis.len()];
        let (r, c) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let k = random_kernel(r, c, &mut rng);
        let (m1, m2) = (random_measure(r, &mut rng), random_measure(r, &mut rng));
        let before = phi_entropy(phi, &m1, &m2).unwrap();
        let after = phi_entropy(phi, &m1.push(&k).unwrap(), &m2.push(&k).unwrap()).unwrap();
        dpi_worst = dpi_worst.max(after - before);
    }
    let pass = ed <= 1e-12 && el <= 1e-12 && ek <= 1e-12 && dpi_worst <= 1e-12;
    outcome(pass, format!("{count} kernels ≤ 4×4: dobrushin {ed:.1e}, lip {el:.1e}, kantorovich {ek:.1e} (tol 1e-12); data processing worst excess {dpi_worst:.1e} over 1000 tuples"))
}

fn determinism() -> Outcome {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let mut paths: Vec<_> = std::fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "json")).collect();
    paths.sort();
    let mut ok = !paths.is_empty();
    for p in &paths {
        let mut c = ExperimentConfig::load(p).unwrap();
        c.plot = true;
        let stem = p.file_stem().unwrap().to_string_lossy().to_string();
        let mut outs = Vec::new();
        for run in ["a", "b"] {
            c.output = dir.path().join(&stem).join(run);
            harness::run_experiment(&c).unwrap();
            outs.push(c.output.clone());
        }
        for f in ["report.csv", "verdicts.json"] {
            ok &= std::fs::read(outs[0].join(f)).unwrap() == std::fs::read(outs[1].join(f)).unwrap();
        }
    }
    outcome(ok, format!("report.csv and verdicts.json byte-identical across two runs of {} configs", paths.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("entropy ladder identity", entropy_ladder),
        ("linear entropy decay", linear_decay),
        ("bounded-cost geometric rate", geometric_rate),
        ("Riccati equivalence", riccati_equivalence),
        ("Riccati rate", riccati_rate),
        ("bridge transport", bridge_transport),
        ("entropy formula cross-check", entropy_cross_check),
        ("envelope domination", envelope),
        ("Lyapunov certificate", lyapunov),
        ("oracle equivalence", oracles),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("[{}] {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
