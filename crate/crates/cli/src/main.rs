use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smpnp::driver::{write_outputs, AtomSource, MeshSource, RunConfig, RunError, Simulation};
use smpnp::mesh::{save_mesh, synth_channel_mesh, ChannelGeometry, Region};

#[derive(Parser)]
#[command(name = "smpnp", version, about = "Size-modified Poisson–Nernst–Planck ion channel solver")]
struct Cli {
    /// Log more (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and write outputs into the configured directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a config: parse it, build the mesh and place the atoms.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        command: MeshCommand,
    },
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Write a synthetic channel mesh.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
}

#[derive(Args)]
struct GeometryArgs {
    /// Lower box corner `x y z` (Å).
    #[arg(long, num_args = 3, allow_negative_numbers = true, value_names = ["X", "Y", "Z"])]
    lo: Option<Vec<f64>>,
    /// Upper box corner `x y z` (Å).
    #[arg(long, num_args = 3, allow_negative_numbers = true, value_names = ["X", "Y", "Z"])]
    hi: Option<Vec<f64>>,
    /// Membrane planes `Z1 Z2`.
    #[arg(long, num_args = 2, allow_negative_numbers = true, value_names = ["Z1", "Z2"], conflicts_with = "no_membrane")]
    membrane: Option<Vec<f64>>,
    /// Solvent-only box.
    #[arg(long)]
    no_membrane: bool,
    #[arg(long)]
    pore_radius: Option<f64>,
    #[arg(long)]
    shell_radius: Option<f64>,
    #[arg(long)]
    protein_extension: Option<f64>,
    /// Cells per direction: one value or three.
    #[arg(long, num_args = 1..=3)]
    resolution: Option<Vec<usize>>,
}

impl GeometryArgs {
    fn build(&self) -> Result<ChannelGeometry, String> {
        let mut g = ChannelGeometry::default();
        if let Some(v) = &self.lo {
            g.lo = [v[0], v[1], v[2]];
        }
        if let Some(v) = &self.hi {
            g.hi = [v[0], v[1], v[2]];
        }
        if let Some(v) = &self.membrane {
            g.membrane = Some((v[0], v[1]));
        }
        if self.no_membrane {
            g.membrane = None;
        }
        g.pore_radius = self.pore_radius.unwrap_or(g.pore_radius);
        g.shell_radius = self.shell_radius.unwrap_or(g.shell_radius);
        g.protein_extension = self.protein_extension.unwrap_or(g.protein_extension);
        if let Some(r) = &self.resolution {
            g.resolution = match r[..] {
                [n] => [n; 3],
                [a, b, c] => [a, b, c],
                _ => return Err("--resolution takes one or three values".into()),
            };
        }
        Ok(g)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match command {
        Command::Run { config, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let sim = Simulation::new(cfg)?;
            match sim.solve() {
                Ok(sol) => {
                    write_outputs(&sol)?;
                    println!(
                        "converged in {} iterations; outputs in {}",
                        sol.iterations(),
                        sol.output_dir.display()
                    );
                    Ok(ExitCode::SUCCESS)
                }
                Err(RunError::NotConverged { iterations, last, solution }) => {
                    write_outputs(&solution)?;
                    eprintln!("no convergence after {iterations} iterations (residuals {last:?})");
                    Ok(ExitCode::from(2))
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Check { config } => {
            let cfg = RunConfig::load(&config)?;
            let sim = Simulation::new(cfg)?;
            let mesh = sim.mesh();
            println!("config ok");
            println!("vertices = {}", mesh.num_vertices());
            println!("tets = {}", mesh.num_tets());
            for r in [Region::Solvent, Region::Protein, Region::Membrane] {
                println!("{:?}_tets = {}", r, mesh.count_region(r));
            }
            println!("solvent_nodes = {}", sim.submesh().num_vertices());
            println!("atoms = {}", sim.atoms().len());
            println!("species = {}", sim.species().len());
            let cfg = sim.config();
            if let MeshSource::File(p) = &cfg.mesh {
                println!("mesh_file = {}", p.display());
            }
            if let AtomSource::File(p) = &cfg.atoms {
                println!("atoms_file = {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Mesh { command: MeshCommand::Synth { out, geometry } } => {
            let g = geometry.build()?;
            let mesh = synth_channel_mesh(&g)?;
            save_mesh(&mesh, &out)?;
            println!("wrote {} ({} vertices, {} tets)", out.display(), mesh.num_vertices(), mesh.num_tets());
            Ok(ExitCode::SUCCESS)
        }
    }
}
