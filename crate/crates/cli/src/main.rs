use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hho_core::experiments::{self, ExperimentConfig, TestKind, TEST_B_CYLINDERS};
use hho_core::{build_cartesian_cut_mesh, validate_mesh, Circle, Error, Point2};

#[derive(Parser)]
#[command(name = "hho-stokes", version, about = "Enriched HHO solver for Stokes flow around cylinders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence experiment and write its data table.
    Run(RunArgs),
    /// Build a mesh, print its statistics and optionally dump it.
    Mesh(MeshArgs),
}

#[derive(Parser)]
struct RunArgs {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    /// Comma-separated subdivisions, e.g. `4,8,16`.
    #[arg(long)]
    meshes: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reference subdivisions of test B.
    #[arg(long)]
    reference: Option<usize>,
    /// `manufactured` or `cylinder` (test A).
    #[arg(long)]
    solution: Option<String>,
    /// Write `x y u_x u_y p mask` samples of the last mesh to this file.
    #[arg(long)]
    dump_fields: Option<PathBuf>,
}

#[derive(Parser)]
struct MeshArgs {
    /// Subdivisions per side.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "A")]
    test: String,
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    /// Write the mesh in text form to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?,
        None => String::new(),
    };
    let mut push = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            text.push_str(&format!("\n{key} = {v}"));
        }
    };
    push("test", args.test.clone());
    push("k", args.k.map(|v| v.to_string()));
    push("gamma", args.gamma.map(|v| v.to_string()));
    push("radius", args.radius.map(|v| v.to_string()));
    push("meshes", args.meshes.clone());
    push("out", args.out.as_ref().map(|p| p.display().to_string()));
    push("reference", args.reference.map(|v| v.to_string()));
    push("solution", args.solution.clone());
    push("dump_fields", args.dump_fields.as_ref().map(|p| p.display().to_string()));
    ExperimentConfig::parse_text(&text)
}

fn run(args: &RunArgs) -> Result<(), Error> {
    let cfg = config(args)?;
    let (report, path) = experiments::run(&cfg)?;
    print!("{}", report.to_table());
    if let Some((p, u)) = report.reference {
        println!("# reference: pressure L2 norm {p:.10}, velocity H1 seminorm {u:.10}");
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn mesh(args: &MeshArgs) -> Result<(), Error> {
    let circles = match args.test.parse::<TestKind>()? {
        TestKind::A => vec![Circle::new(Point2::new(0.5, 0.5), args.radius)?],
        TestKind::B => TEST_B_CYLINDERS
            .iter()
            .map(|&(x, y, r)| Circle::new(Point2::new(x, y), r))
            .collect::<Result<_, _>>()?,
    };
    let mesh = build_cartesian_cut_mesh(args.n, &circles)?;
    let d = validate_mesh(&mesh)?;
    println!("elements {}", mesh.elements.len());
    println!("internal_faces {}", d.num_internal_faces);
    println!("boundary_faces {}", d.num_boundary_faces);
    println!("h {:.16e}", mesh.h);
    println!("area {:.16e} (expected {:.16e})", d.total_area, d.expected_area);
    println!("chunkiness {:.6} .. {:.6}", d.min_chunkiness, d.max_chunkiness);
    if let Some(path) = &args.out {
        std::fs::write(path, mesh.to_text())
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Mesh(args) => mesh(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
