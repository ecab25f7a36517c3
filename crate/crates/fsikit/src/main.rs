//! Command-line entry points: `run` (full simulation), `mesh` (tube mesh
//! generation only), and `check` (config validation with a resolved-parameter
//! table). `FSIKIT_OUT` overrides the output directory when `--out` is absent.

use clap::{Parser, Subcommand};
use fsikit::config::{self, Config, ModelKind, NewtonStop, SolverKind, ToleranceModeCfg};
use fsikit::coupling::{time_loop, FsiCase, ToleranceController, ToleranceMode};
use fsikit::fluid::{viscosity_from_poise, FluidParams, FluidProblem};
use fsikit::linsolve::SaddleSolver;
use fsikit::mesh::{generate_tube_mesh, save_mesh};
use fsikit::output::{write_vtk, RunLog, VtkField};
use fsikit::structure::{ArteryLayer, StructureProblem, WallModel};
use fsikit::{FsiError, Result};
use nalgebra::Vector3;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fsikit", about = "Partitioned FSI simulation of a pressurized elastic tube")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the coupled simulation
    Run {
        #[arg(long)]
        config: PathBuf,
        /// output directory (default: config value or $FSIKIT_OUT)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the tube mesh and write it to a file
    Mesh {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a config and print the resolved parameters
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn wall_model(cfg: &Config) -> WallModel {
    match cfg.structure.model {
        ModelKind::MooneyRivlin => WallModel::MooneyRivlin {
            c10: cfg.structure.c10,
            c01: cfg.structure.c01,
        },
        ModelKind::Artery => WallModel::Artery {
            media: ArteryLayer {
                c10: cfg.structure.c10_media,
                k1: cfg.structure.k1_media,
                k2: cfg.structure.k2_media,
                alpha_deg: cfg.structure.alpha_media_deg,
            },
            adventitia: ArteryLayer {
                c10: cfg.structure.c10_adventitia,
                k1: cfg.structure.k1_adventitia,
                k2: cfg.structure.k2_adventitia,
                alpha_deg: cfg.structure.alpha_adventitia_deg,
            },
        },
    }
}

/// Builds the full coupled case from a validated configuration.
pub fn build_case(cfg: &Config) -> Result<FsiCase> {
    let mesh = generate_tube_mesh(&cfg.tube_params())?;
    let fluid_sub = mesh.extract(true);
    let struct_sub = mesh.extract(false);
    let fluid = FluidProblem::new(
        fluid_sub,
        FluidParams {
            rho_f: cfg.fluid.rho,
            mu: viscosity_from_poise(cfg.fluid.viscosity_poise),
            dt: cfg.solver.dt,
            g_in: Vector3::zeros(),
        },
    )?;
    let structure = StructureProblem::new(
        struct_sub,
        &wall_model(cfg),
        cfg.structure.rho,
        cfg.structure.kappa,
        cfg.structure.beta,
        cfg.structure.gamma,
        cfg.solver.dt,
        cfg.solver.theta,
    )?;
    let extension = fsikit::ale::HarmonicExtension::new(&fluid.sub)?;
    let (iface_fluid, iface_struct) =
        FsiCase::assemble_interface(&mesh, &fluid, &structure, &extension)?;
    let fluid_solver = match cfg.solver.fluid_solver {
        SolverKind::Krylov => SaddleSolver::krylov_default(),
        SolverKind::Amg => SaddleSolver::Amg {
            smoother: fsikit::amg::SmootherKind::BraessSarazin {
                steps: cfg.solver.bs_steps,
            },
            max_cycles: 200,
        },
    };
    let structure_solver = match cfg.solver.structure_solver {
        SolverKind::Krylov => SaddleSolver::krylov_default(),
        SolverKind::Amg => SaddleSolver::Amg {
            smoother: fsikit::amg::SmootherKind::Vanka {
                steps: cfg.solver.vanka_steps,
                omega: cfg.solver.vanka_omega,
            },
            max_cycles: 200,
        },
    };
    let tols = ToleranceController {
        mode: match cfg.solver.tolerance_mode {
            ToleranceModeCfg::Fixed => ToleranceMode::Fixed,
            ToleranceModeCfg::Adaptive => ToleranceMode::Adaptive,
        },
        eps_dn: cfg.solver.eps_dn,
        eps2: cfg.solver.eps_newton,
        eps1_fixed: cfg.solver.eps_linear,
        eps1_cap: 1e-1,
        eps1_floor: 1e-12,
        absolute_newton_base: match cfg.solver.newton_stop {
            NewtonStop::Relative => None,
            NewtonStop::Absolute => Some(100.0),
        },
        max_newton: 25,
        max_dn: 100,
    };
    Ok(FsiCase {
        mesh,
        fluid,
        structure,
        extension,
        iface_fluid,
        iface_struct,
        fluid_solver,
        structure_solver,
        tols,
    })
}

fn output_dir(cfg: &Config, cli_out: Option<PathBuf>) -> PathBuf {
    cli_out
        .or_else(|| std::env::var_os("FSIKIT_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.solver.output_dir))
}

fn run(config: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let cfg = config::parse_config(&config)?;
    let dir = output_dir(&cfg, out);
    std::fs::create_dir_all(&dir).map_err(|source| FsiError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let log = RunLog::create(&dir)?;
    let mut case = build_case(&cfg)?;
    println!(
        "fsikit run: {} tets fluid, {} tets structure, {} interface vertices",
        case.fluid.sub.n_tets(),
        case.structure.sub.n_tets(),
        case.n_interface_vertices()
    );
    let every = cfg.solver.output_every;
    let dir2 = dir.clone();
    let result = time_loop(
        &mut case,
        cfg.solver.n_steps,
        cfg.fluid.inlet_traction,
        cfg.fluid.pulse_duration,
        |step, case, state, report| {
            log.record_step(step, report)?;
            println!(
                "step {step}: {} DN iterations, final interface residual {:.3e}",
                report.iterations(),
                report.interface_residuals.last().copied().unwrap_or(0.0)
            );
            if step % every == 0 {
                write_snapshot(&dir2, step, case, state)?;
            }
            Ok(())
        },
    );
    match result {
        Ok(_) => {
            println!("run complete; outputs in {}", dir.display());
            Ok(())
        }
        Err(e) => {
            // logs are already flushed per step for post-mortem inspection
            Err(e)
        }
    }
}

fn write_snapshot(
    dir: &std::path::Path,
    step: usize,
    case: &FsiCase,
    state: &fsikit::coupling::FsiTimeState,
) -> Result<()> {
    let n = case.mesh.vertices.len();
    let mut velocity = vec![0.0; 3 * n];
    let mut fluid_pressure = vec![0.0; n];
    let mut displacement = vec![0.0; 3 * n];
    let mut solid_pressure = vec![0.0; n];
    for (local, &global) in case.fluid.sub.to_global.iter().enumerate() {
        for c in 0..3 {
            velocity[3 * global + c] = state.f_state.u[3 * local + c];
            displacement[3 * global + c] = state.d_f_prev[3 * local + c];
        }
        fluid_pressure[global] = state.f_state.p[local];
    }
    for (local, &global) in case.structure.sub.to_global.iter().enumerate() {
        for c in 0..3 {
            displacement[3 * global + c] = state.s_state.d[3 * local + c];
        }
        solid_pressure[global] = state.s_state.p[local];
    }
    write_vtk(
        &dir.join(format!("step_{step:04}.vtk")),
        &case.mesh,
        &[
            VtkField::Vector("velocity", &velocity),
            VtkField::Scalar("fluid_pressure", &fluid_pressure),
            VtkField::Vector("displacement", &displacement),
            VtkField::Scalar("solid_pressure", &solid_pressure),
        ],
    )
}

fn check(config: PathBuf) -> Result<()> {
    let cfg = config::parse_config(&config)?;
    println!("configuration OK\n");
    print!("{}", cfg.print());
    println!("\n# derived quantities");
    println!(
        "viscosity = {} kPa*ms ({} Poise)",
        viscosity_from_poise(cfg.fluid.viscosity_poise),
        cfg.fluid.viscosity_poise
    );
    match cfg.structure.model {
        ModelKind::MooneyRivlin => {
            println!("mu_linear = {} kPa", 2.0 * (cfg.structure.c10 + cfg.structure.c01));
        }
        ModelKind::Artery => {
            println!(
                "mu_linear media = {} kPa, adventitia = {} kPa",
                2.0 * (cfg.structure.c10_media + cfg.structure.k1_media / (2.0 * cfg.structure.k2_media)),
                2.0 * (cfg.structure.c10_adventitia
                    + cfg.structure.k1_adventitia / (2.0 * cfg.structure.k2_adventitia))
            );
        }
    }
    let p = cfg.tube_params();
    let n2d = 1 + (p.n_radial_fluid + 2 * p.n_radial_layer + 1) * p.n_circ;
    println!(
        "mesh: ~{} vertices/station x {} stations",
        n2d,
        p.n_axial + 1
    );
    Ok(())
}

fn mesh_cmd(config: PathBuf, out: PathBuf) -> Result<()> {
    let cfg = config::parse_config(&config)?;
    let mesh = generate_tube_mesh(&cfg.tube_params())?;
    save_mesh(&mesh, &out)?;
    println!(
        "wrote {} ({} vertices, {} tets, {} boundary tris)",
        out.display(),
        mesh.vertices.len(),
        mesh.tets.len(),
        mesh.boundary_tris.len()
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(config, out),
        Command::Mesh { config, out } => mesh_cmd(config, out),
        Command::Check { config } => check(config),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
