use pdecont::demos::MassConsProblem;
use pdecont::problem::{ConstraintCtx, PdeProblem};
use pdecont::steady::{cont_steady, ContSettings, SteadyState};

fn main() {
    let p = MassConsProblem::new(50);
    for dir in [-1.0, 1.0] {
        let pv = p.default_params();
        let state = SteadyState { u: p.homogeneous_state(&pv, false), params: pv };
        let settings = ContSettings { ds: 0.08, dsmax: 0.2, n_eig: 10, ..Default::default() };
        let mut cs = ConstraintCtx::default();
        let branch = cont_steady(&p, state, &settings, &mut cs, 25, dir).unwrap();
        println!("dir {:+}: {} points, stall={:?}", dir, branch.points.len(), branch.stall_reason);
        for pt in &branch.points {
            println!(
                "  {:?} alpha={:+.4} beta={:+.4} u0={:+.4} unstable={:?} crit={:?}",
                pt.ptype, pt.lambda(), pt.params.values[1], pt.u[0], pt.unstable,
                pt.critical.as_ref().map(|c| (format!("{:.2e}", c.value.re), format!("{:.3}", c.value.im)))
            );
        }
    }
}
