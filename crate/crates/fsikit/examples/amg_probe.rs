//! Scratch: omega / aggregate-cap sweep at 6 and 12 Vanka steps.

use fsikit::amg::{amg_solve, SaddleAmg, SaddleAmgOptions, SmootherKind};
use fsikit::mesh::{generate_tube_mesh, TubeParams};
use fsikit::structure::{NewmarkState, StructureLoad, StructureProblem, StructureState, WallModel};

fn main() {
    let mesh = generate_tube_mesh(&TubeParams::benchmark(10, 10, 1, 1)).unwrap();
    let sub = mesh.extract(false);
    let p = StructureProblem::new(
        sub,
        &WallModel::MooneyRivlin { c10: 3.0, c01: 0.3 },
        1.2, 1e5, 0.625, 1.0, 0.125, 6.0,
    ).unwrap();
    let n = p.n_vertices();
    let state = StructureState::at_rest(n);
    let h = NewmarkState::at_rest(3 * n, 0.625, 1.0, 0.125);
    let sys = p.assemble(&state, &h, &StructureLoad::zero(n)).unwrap();
    println!("{} dofs", sys.n_total());
    let nn = sys.n_total();
    let rhs: Vec<f64> = (0..nn).map(|i| ((i * 13 % 17) as f64) - 8.0).collect();
    for cap in [6usize, 8, 12] {
        for omega in [0.6, 0.78, 0.9, 1.0] {
            for steps in [6usize, 12] {
                let opts = SaddleAmgOptions { aggregate_cap: cap, ..Default::default() };
                let kind = SmootherKind::Vanka { steps, omega };
                let amg = SaddleAmg::build(&sys, kind, &opts).unwrap();
                let (_, rep) = amg_solve(&amg, &sys, &rhs, 1e-8, 200);
                println!(
                    "cap={cap} omega={omega} steps={steps}: levels {:?} cycles {} reduction {:.1e}",
                    amg.level_dofs(), rep.iterations, rep.achieved_reduction
                );
            }
        }
    }
}
