//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured numbers (run with --nocapture to see them).

mod common;

use common::*;
use pdecont::demos::CglProblem;
use pdecont::steady::PointType;

/// Criterion 1: cGL Hopf-point locations at n = 30 within the stated bounds,
/// and mesh doubling reduces each location error by at least 3x.
#[test]
fn acceptance_01_cgl_hbp_locations() {
    let exact = [0.0, 0.25, 1.0];
    let errors = |n: usize| -> Vec<f64> {
        let (_, branch) = cgl_trivial_branch(n, 20, 1e-6);
        let hps = hopf_points(&branch);
        assert!(hps.len() >= 3, "n={}: found {} Hopf points", n, hps.len());
        (0..3).map(|k| (hps[k].lambda() - exact[k]).abs()).collect()
    };
    let e30 = errors(30);
    assert!(e30[0] <= 1e-3, "|r1| = {:.2e}", e30[0]);
    assert!(e30[1] <= 1e-3, "|r2 - 0.25| = {:.2e}", e30[1]);
    assert!(e30[2] <= 5e-3, "|r3 - 1| = {:.2e}", e30[2]);
    let e60 = errors(60);
    // The k = 0 mode is exact in the discretization, so its location error is
    // pure localization noise; the 3x reduction applies above that floor.
    let floor = 1e-6;
    for k in 0..3 {
        assert!(
            e60[k] <= (e30[k] / 3.0).max(floor),
            "doubling n: error {} went {:.3e} -> {:.3e}",
            k,
            e30[k],
            e60[k]
        );
    }
    pass(
        1,
        &format!(
            "r-errors at n=30: {:.1e}/{:.1e}/{:.1e}; at n=60: {:.1e}/{:.1e}/{:.1e}",
            e30[0], e30[1], e30[2], e60[0], e60[1], e60[2]
        ),
    );
}

/// Criterion 2: period on the first orbit branch converges monotonically to
/// the analytic wave-train period as the t-mesh is refined; at m = 60 the
/// relative error is at most 1e-2.
#[test]
fn acceptance_02_cgl_b1_period_convergence() {
    let (p, branch) = cgl_trivial_branch(30, 20, 1e-4);
    let hp1 = &hopf_points(&branch)[0];
    let samples = [0.3, 0.6, 1.0];
    let mut errs = vec![Vec::new(); samples.len()];
    for (mi, m) in [20usize, 40, 60].into_iter().enumerate() {
        let hb = cgl_orbit_branch(&p, hp1, m + 1, 22, 0, 0.12, None, 1e-8);
        for (k, &r) in samples.iter().enumerate() {
            let orbit = orbit_at_lambda(&p, &hb, r).expect("orbit at sample");
            let t_ana = cgl_analytic_period(&p, r);
            let rel = (orbit.period - t_ana).abs() / t_ana;
            errs[k].push(rel);
            let _ = mi;
        }
    }
    for (k, &r) in samples.iter().enumerate() {
        assert!(
            errs[k][0] >= errs[k][1] && errs[k][1] >= errs[k][2],
            "r = {}: errors not monotone: {:?}",
            r,
            errs[k]
        );
        assert!(errs[k][2] <= 1e-2, "r = {}: error at m=60 is {:.3e}", r, errs[k][2]);
    }
    pass(
        2,
        &format!(
            "relative T errors m=20/40/60 at r=0.3: {:.1e}/{:.1e}/{:.1e}; r=1.0: {:.1e}/{:.1e}/{:.1e}",
            errs[0][0], errs[0][1], errs[0][2], errs[2][0], errs[2][1], errs[2][2]
        ),
    );
}

/// Criterion 3: trivial Floquet multiplier within 1e-8 of 1 on every
/// converged cGL and Brusselator orbit.
#[test]
fn acceptance_03_trivial_multiplier() {
    let (p, branch) = cgl_trivial_branch(30, 20, 1e-4);
    let hp1 = &hopf_points(&branch)[0];
    let hb = cgl_orbit_branch(&p, hp1, 41, 12, 1, 0.12, None, 1e-10);
    let mut worst: f64 = 0.0;
    for rec in hb.records.iter().skip(1) {
        let err = rec.multipliers.as_ref().expect("multipliers").err;
        worst = worst.max(err);
        assert!(err <= 1e-8, "cGL orbit at r = {:.4}: err = {:.2e}", rec.orbit.lambda(), err);
    }
    // Brusselator wave branch, resolved regime
    let (bp, bbranch) = brusselator_steady(60, 4);
    let bhp = hopf_points(&bbranch);
    let hb2 = brusselator_orbit_branch(&bp, &bhp[0], 41, 4, 1, 0.08, true, 1e-10);
    for rec in hb2.records.iter().skip(1) {
        let err = rec.multipliers.as_ref().expect("multipliers").err;
        worst = worst.max(err);
        assert!(
            err <= 1e-8,
            "Brusselator orbit at b = {:.4}: err = {:.2e}",
            rec.orbit.lambda(),
            err
        );
    }
    pass(3, &format!("largest trivial-multiplier error {:.2e}", worst));
}

/// Criterion 4: instability index pattern along the first two cGL orbit
/// branches: b1 carries ind 1 -> 0 across its fold; b2 starts at 3, drops to
/// 2 at its fold and to 1 near r = 0.45.
#[test]
fn acceptance_04_cgl_index_pattern() {
    let (p, branch) = cgl_trivial_branch(30, 20, 1e-4);
    let hps = hopf_points(&branch);

    // b1
    let hb1 = cgl_orbit_branch(&p, &hps[0], 41, 16, 1, 0.12, None, 1e-8);
    let recs: Vec<(f64, usize, PointType)> = hb1
        .records
        .iter()
        .skip(1)
        .map(|r| (r.orbit.lambda(), r.ind().unwrap(), r.ptype))
        .collect();
    let fold_idx = recs.iter().position(|(_, _, t)| *t == PointType::Fold).expect("b1 fold");
    let fold_lambda = recs[fold_idx].0;
    assert!((fold_lambda + 0.25).abs() <= 0.1, "b1 fold at r = {:.3}", fold_lambda);
    for (lam, ind, _) in &recs[..fold_idx] {
        assert_eq!(*ind, 1, "b1 before fold at r = {:.3}: ind = {}", lam, ind);
    }
    for (lam, ind, _) in &recs[fold_idx + 1..] {
        assert_eq!(*ind, 0, "b1 after fold at r = {:.3}: ind = {}", lam, ind);
    }

    // b2
    let hb2 = cgl_orbit_branch(&p, &hps[1], 41, 14, 1, 0.08, Some(0.0), 1e-8);
    let recs2: Vec<(f64, usize, PointType)> = hb2
        .records
        .iter()
        .skip(1)
        .map(|r| (r.orbit.lambda(), r.ind().unwrap(), r.ptype))
        .collect();
    let inds: Vec<usize> = recs2.iter().map(|(_, i, _)| *i).collect();
    assert_eq!(inds[0], 3, "b2 starts with ind = {}", inds[0]);
    // ordered index sequence 3 -> 2 -> 1
    let seq: Vec<usize> = {
        let mut s = vec![inds[0]];
        for &i in &inds[1..] {
            if *s.last().unwrap() != i {
                s.push(i);
            }
        }
        s
    };
    assert_eq!(seq, vec![3, 2, 1], "b2 index sequence {:?}", seq);
    let fold2 = recs2.iter().position(|(_, _, t)| *t == PointType::Fold).expect("b2 fold");
    let drop32 = recs2.windows(2).position(|w| w[0].1 == 3 && w[1].1 == 2).unwrap();
    assert!(
        (drop32 as isize - fold2 as isize).abs() <= 1,
        "3->2 drop (record {}) not at the fold (record {})",
        drop32,
        fold2
    );
    // localize the 2 -> 1 multiplier crossing by bisection in the parameter
    let drop21 = recs2.windows(2).position(|w| w[0].1 == 2 && w[1].1 == 1).unwrap();
    let (mut lo, mut hi) = (recs2[drop21].0, recs2[drop21 + 1].0);
    let post_fold_step = fold2 + 2; // records skip the initial one
    for _ in 0..8 {
        let mid = 0.5 * (lo + hi);
        match ind_at_lambda(&p, &hb2, mid, post_fold_step) {
            Some(2) => lo = mid,
            Some(_) => hi = mid,
            None => break,
        }
    }
    let lam21 = 0.5 * (lo + hi);
    assert!((lam21 - 0.45).abs() <= 0.1, "2->1 drop near r = {:.3}", lam21);
    pass(
        4,
        &format!(
            "b1: 1 -> 0 at fold r = {:.3}; b2: 3 -> 2 at fold r = {:.3}, 2 -> 1 near r = {:.3}",
            fold_lambda, recs2[fold2].0, lam21
        ),
    );
}

use ndarray::prelude::*;
use pdecont::branching::{hoswibra, twswibra, HoswibraOpts};
use pdecont::c64;
use pdecont::demos::{cgl, masscons, KsProblem, MassConsProblem};
use pdecont::floquet::floq_fa1;
use pdecont::hopf::{assemble_g, cont_po, HopfOrbit, HopfWeights, PoSettings};
use pdecont::linsys::{eigs_near, EigRequest};
use pdecont::problem::{jacobian, ConstraintCtx, PdeProblem};
use pdecont::steady::{cont_steady, ContSettings, SteadyState};

/// Criterion 5: every slice of every mass-conservation Hopf orbit keeps the
/// mass defect below 1e-8 while the orbit tolerance is only 1e-6.
#[test]
fn acceptance_05_masscons_slice_masses() {
    let p = MassConsProblem::new(50);
    let pv = p.default_params();
    let state = SteadyState { u: p.homogeneous_state(&pv, false), params: pv };
    let settings = ContSettings { ds: 0.08, dsmax: 0.25, n_eig: 10, ..Default::default() };
    let mut cs = ConstraintCtx::default();
    let branch = cont_steady(&p, state, &settings, &mut cs, 40, -1.0).expect("masscons branch");
    let hps = hopf_points(&branch);
    assert!(!hps.is_empty(), "no Hopf points found on the mass-cons branch");

    let opts = HoswibraOpts {
        dlam: Some(0.0),
        tl: 31,
        aux: vec![masscons::P_BETA],
        ..Default::default()
    };
    let orbit = hoswibra(&p, &hps[0], &opts).expect("mass-cons hoswibra");
    let po = PoSettings { ds: 0.1, dsmax: 0.25, tol: 1e-6, flcheck: 0, detect: false, ..Default::default() };
    let mut cs2 = ConstraintCtx::default();
    let hb = cont_po(&p, orbit, &po, &mut cs2, 8).expect("mass-cons orbit branch");
    assert!(hb.records.len() >= 8, "short branch: {}", hb.records.len());
    let mut worst: f64 = 0.0;
    for rec in hb.records.iter().skip(1) {
        let o = &rec.orbit;
        for j in 0..o.m_unique() {
            let defect = (p.mass_of(&o.y.column(j)) - o.params.values[masscons::P_MASS]).abs();
            worst = worst.max(defect);
            assert!(
                defect <= 1e-8,
                "slice {} of orbit at alpha = {:.4}: |Q| = {:.2e}",
                j,
                o.lambda(),
                defect
            );
        }
    }
    pass(5, &format!("{} orbits checked, worst slice mass defect {:.2e}", hb.records.len() - 1, worst));
}

/// Criterion 6: KS steady bifurcation points at alpha_k = (2/(k pi))^2 for
/// k = 1..3, within 1e-3 at n = 100.
#[test]
fn acceptance_06_ks_steady_bifurcations() {
    let p = KsProblem::new(100);
    let pv = p.default_params();
    let state = SteadyState { u: Array1::zeros(p.n_u()), params: pv };
    let settings = ContSettings {
        ds: 0.03,
        dsmax: 0.04,
        n_eig: 8,
        mu2: 1e-7,
        bisec_max: 30,
        ..Default::default()
    };
    let mut cs = ConstraintCtx::default();
    let branch = cont_steady(&p, state, &settings, &mut cs, 16, -1.0).expect("ks branch");
    let bps: Vec<f64> = branch
        .points
        .iter()
        .filter(|pt| pt.ptype == PointType::Branch)
        .map(|pt| pt.lambda())
        .collect();
    assert!(bps.len() >= 3, "found {} branch points: {:?}", bps.len(), bps);
    let mut details = String::new();
    for k in 1..=3 {
        let exact = KsProblem::alpha_k(k);
        let err = bps
            .iter()
            .map(|a| (a - exact).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(err <= 1e-3, "alpha_{k} = {:.5}: nearest detection off by {:.2e}", exact, err);
        details.push_str(&format!("alpha_{k} err {:.1e}; ", err));
    }
    pass(6, &details);
}

/// Shared TW setup: switch the second (double) Hopf point of the periodic
/// cGL problem onto the traveling-wave branch and continue it as a relative
/// equilibrium with the translational phase condition.
fn tw_branch(n: usize, usrlam: Vec<f64>) -> (CglProblem, pdecont::steady::Branch) {
    let p0 = CglProblem::periodic(n);
    let mut pv = p0.default_params();
    pv.set_primary(0.5);
    let state = SteadyState { u: Array1::zeros(p0.n_u()), params: pv };
    let settings = ContSettings { ds: 0.05, dsmax: 0.1, n_eig: 12, ..Default::default() };
    let mut cs = ConstraintCtx::default();
    let branch = cont_steady(&p0, state, &settings, &mut cs, 14, 1.0).expect("pbc trivial branch");
    let hp2 = hopf_points(&branch)
        .into_iter()
        .find(|hp| (hp.lambda() - 1.0).abs() < 0.05)
        .expect("double Hopf point near r = 1");

    // amplitude-calibrated switch onto the large-amplitude wave train
    let ptw = CglProblem::periodic_tw(n);
    let probe = twswibra(&ptw, &hp2, cgl::P_SPEED, 1.0, 1.0, c64::new(1.0, 0.0)).expect("twswibra");
    let mode_amp = probe
        .u
        .iter()
        .zip(hp2.u.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let (rsq, _) = CglProblem::wavetrain(&probe.params, 1.0, true).expect("wavetrain at HBP");
    let eps = rsq.sqrt() / mode_amp;
    let start = twswibra(&ptw, &hp2, cgl::P_SPEED, 1.0, eps, c64::new(1.0, 0.0)).expect("twswibra");

    let mut cs2 = ConstraintCtx { u_ref: Some(start.u.clone()) };
    let settings2 = ContSettings {
        ds: 0.05,
        dsmax: 0.2,
        n_eig: 8,
        usrlam,
        detect: false,
        ..Default::default()
    };
    let branch = cont_steady(&ptw, start, &settings2, &mut cs2, 22, 1.0).expect("tw branch");
    (ptw, branch)
}

/// Criterion 7: the continued traveling-wave branch matches the closed-form
/// amplitude and speed at three parameter samples to 1e-3 relative.
#[test]
fn acceptance_07_tw_oracle() {
    let samples = [1.3, 1.6, 2.0];
    let (p, branch) = tw_branch(64, samples.to_vec());
    let nd = p.mesh().n_dof();
    let mut details = String::new();
    for &r in &samples {
        let pt = branch
            .points
            .iter()
            .find(|pt| pt.ptype == PointType::UserLam && (pt.lambda() - r).abs() < 1e-12)
            .unwrap_or_else(|| panic!("no landing at r = {}", r));
        // pointwise modulus of the wave train is constant
        let amp_num = (0..nd)
            .map(|i| pt.u[i] * pt.u[i] + pt.u[nd + i] * pt.u[nd + i])
            .sum::<f64>()
            / nd as f64;
        let (rsq, omega) = CglProblem::wavetrain(&pt.params, 1.0, true).expect("oracle");
        let amp_err = (amp_num.sqrt() - rsq.sqrt()).abs() / rsq.sqrt();
        let s_num = pt.params.values[cgl::P_SPEED];
        let s_err = (s_num.abs() - omega.abs()).abs() / omega.abs();
        assert!(amp_err <= 1e-3, "r = {}: |R| error {:.2e}", r, amp_err);
        assert!(s_err <= 1e-3, "r = {}: speed error {:.2e} (s = {})", r, s_err, s_num);
        details.push_str(&format!("r={}: |R| err {:.1e}, s err {:.1e}; ", r, amp_err, s_err));
    }
    pass(7, &details);
}

/// Criterion 8: the leading periodic-orbit multipliers of a traveling wave
/// (continued as a relative equilibrium) match the exponentials of the
/// comoving-frame eigenvalues to 1e-3 relative.
#[test]
fn acceptance_08_tw_multiplier_exponentiation() {
    let n = 96;
    let (ptw, branch) = tw_branch(n, vec![1.3]);
    let pt = branch
        .points
        .iter()
        .find(|pt| pt.ptype == PointType::UserLam)
        .expect("landing at r = 1.3");
    let s = pt.params.values[cgl::P_SPEED];

    // comoving-frame spectrum at the relative equilibrium
    let gu = jacobian(&ptw, &pt.u.view(), &pt.params, None);
    let a = gu.mapv(|v| -v);
    let sets = eigs_near(
        &a.view(),
        &ptw.mass_sys().view(),
        &EigRequest::single(c64::new(0.0, 0.0), 12),
    );
    let mus: Vec<c64> = sets.into_iter().next().unwrap().expect("comoving eigs").iter().map(|p| p.value).collect();

    // reconstruct the lab-frame orbit by exact grid shifts: one cell per slice
    let plab = CglProblem::periodic(n);
    let nd = plab.mesh().n_dof();
    let m_unique = nd; // one grid cell of drift per time slice
    let period = plab.mesh().volume() / s.abs();
    let mut params = pt.params.clone();
    params.values[cgl::P_SPEED] = 0.0;
    params.aux = vec![];
    let mut y = Array2::<f64>::zeros((plab.n_u(), m_unique + 1));
    for j in 0..=m_unique {
        for c in 0..2 {
            for i in 0..nd {
                // u(x, t_j) = v(x - s T t_j); s > 0 shifts content rightward
                let src = if s > 0.0 { (i + nd - (j % nd)) % nd } else { (i + j) % nd };
                y[[c * nd + i, j]] = pt.u[c * nd + src];
            }
        }
    }
    let t: Vec<f64> = (0..=m_unique).map(|j| j as f64 / m_unique as f64).collect();
    let mut orbit = HopfOrbit {
        y,
        t,
        period,
        params,
        y0d: Array2::zeros((plab.n_u(), m_unique + 1)),
        tau: None,
        weights: HopfWeights::default(),
        y0dsw: 2,
        free_t: true,
        x0i: 0,
    };
    orbit.close();
    orbit.refresh_y0d(&plab);
    // sanity: the reconstructed orbit satisfies the lab-frame equations
    let res = assemble_g(&plab, &orbit)
        .expect("residual")
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    assert!(res < 0.05, "reconstructed orbit residual {:.3e}", res);

    let fl = floq_fa1(&plab, &orbit, 12, 1e-4).expect("FA1 on lab orbit");
    let mut predicted: Vec<c64> = mus.iter().map(|mu| (mu * period).exp()).collect();
    predicted.sort_by(|x, y| y.norm().partial_cmp(&x.norm()).unwrap());
    let mut details = String::new();
    for k in 0..5 {
        let got = fl.multipliers[k];
        let best = predicted
            .iter()
            .map(|p| (got - p).norm() / got.norm().max(1e-12))
            .fold(f64::INFINITY, f64::min);
        assert!(
            best <= 1e-3,
            "multiplier {}: gamma = {:.5}{:+.5}i, best relative match {:.2e}",
            k,
            got.re,
            got.im,
            best
        );
        details.push_str(&format!("|g{}|={:.4} err {:.1e}; ", k, got.norm(), best));
    }
    pass(8, &details);
}
