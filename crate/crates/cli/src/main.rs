use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use idxfabric::dataset::DESCRIPTOR_FILE;
use idxfabric::fabric::{CacheConfig, DEFAULT_CACHE_BYTES};
use idxfabric::pipeline::{
    bench_blocksize, bench_locations, ingest, make_replica, synth_volume, verify_roundtrip, write_blocksize_csv,
    write_locations_csv, LocationSetup, PipelineError, RawVolume, SynthKind,
};
use idxfabric::prelude::*;
use idxfabric::store::copy_dataset;
use idxfabric_service::AppState;

const EXIT_REFUSED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "idxfabric", version, about = "Progressive multiresolution dataset tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a RAWV volume into a directory store.
    Convert {
        raw: PathBuf,
        descriptor: PathBuf,
        store: PathBuf,
        #[arg(long, default_value = "lossless")]
        codec: CodecSpec,
    },
    /// Add a replica re-encoded from the full-precision one.
    Replica {
        store: PathBuf,
        /// raw, lossless, truncate or truncate-<bits>
        codec: String,
        #[arg(short = 'p', long = "precision")]
        bits: Option<u8>,
    },
    /// Serve directory stores over HTTP.
    Serve {
        #[arg(required = true)]
        stores: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = 0.0)]
        price_per_gib: f64,
        /// Accept block and descriptor uploads.
        #[arg(long)]
        writable: bool,
    },
    /// Read a box at a level and write it as RAWV.
    Fetch {
        uri: String,
        #[arg(long)]
        field: Option<String>,
        #[arg(long, default_value_t = 0)]
        t: u32,
        /// Per-axis half-open ranges in axis order, e.g. 0:64,0:64,10:11
        #[arg(long = "box")]
        region: Option<String>,
        #[arg(long)]
        level: Option<u32>,
        #[arg(long, default_value_t = 32)]
        precision: u32,
        #[command(flatten)]
        limits: Limits,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the dataset's digital-object record.
    Info { uri: String },
    /// Storage studies; CSV on stdout.
    Bench {
        #[command(subcommand)]
        study: Study,
    },
    /// Compare a replica against the source volume.
    Psnr {
        raw: PathBuf,
        uri: String,
        #[arg(long, default_value = "lossless")]
        replica: String,
    },
    /// Write a seeded synthetic volume, optionally with a descriptor.
    Synth {
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "64,64,64")]
        extents: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "smooth")]
        kind: SynthKind,
        #[arg(long)]
        descriptor: Option<PathBuf>,
        #[arg(long, default_value = "synth")]
        id: String,
        #[arg(long, default_value_t = 16)]
        block_bits: u32,
    },
}

#[derive(Args)]
struct Limits {
    #[arg(long)]
    max_bytes: Option<u64>,
    #[arg(long)]
    max_requests: Option<u64>,
    #[arg(long)]
    max_cost_units: Option<f64>,
    #[arg(long)]
    max_latency_ms: Option<f64>,
    #[arg(long, default_value_t = 0)]
    min_level: u32,
}

impl Limits {
    fn constraints(&self) -> Constraints {
        Constraints {
            max_bytes: self.max_bytes,
            max_requests: self.max_requests,
            max_cost_units: self.max_cost_units,
            max_latency_ms: self.max_latency_ms,
            min_level: self.min_level,
        }
    }
}

#[derive(Args)]
struct Synthetic {
    #[arg(long, value_delimiter = ',')]
    extents: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Use this RAWV volume instead of a synthetic one.
    #[arg(long)]
    raw: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    latency_ms: f64,
    /// Bytes per second; 0 means unlimited.
    #[arg(long, default_value_t = 100.0 * 1024.0 * 1024.0)]
    bandwidth: f64,
}

impl Synthetic {
    fn volume(&self, default: &[u64]) -> Result<RawVolume> {
        match &self.raw {
            Some(p) => Ok(RawVolume::load(p)?),
            None if self.extents.is_empty() => Ok(synth_volume(default, self.seed, SynthKind::Smooth)),
            None => Ok(synth_volume(&self.extents, self.seed, SynthKind::Smooth)),
        }
    }
}

#[derive(Subcommand)]
enum Study {
    /// Object count, ingest time and simulated read time per block size.
    Blocksize {
        #[command(flatten)]
        source: Synthetic,
        #[arg(long, default_value_t = 11)]
        min_k: u32,
        #[arg(long, default_value_t = 22)]
        max_k: u32,
        #[arg(long, default_value = "raw")]
        codec: CodecSpec,
    },
    /// Read time per level for local, remote and cached access.
    Locations {
        #[command(flatten)]
        source: Synthetic,
        #[arg(long, default_value_t = 16)]
        block_bits: u32,
        #[arg(long, value_delimiter = ',')]
        levels: Vec<u32>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(FabricError::Refused(r)) = refusal(&e) {
                eprintln!("refused: {r}");
                eprintln!("hint: {}", serde_json::to_string(&r.hint).unwrap_or_default());
                return ExitCode::from(EXIT_REFUSED);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn refusal(e: &anyhow::Error) -> Option<&FabricError> {
    let f = e.downcast_ref::<FabricError>().or_else(|| match e.downcast_ref::<PipelineError>() {
        Some(PipelineError::Fabric(f)) => Some(&**f),
        _ => None,
    })?;
    matches!(f, FabricError::Refused(_)).then_some(f)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Convert { raw, descriptor, store, codec } => convert(&raw, &descriptor, &store, codec),
        Command::Replica { store, codec, bits } => replica(&store, &codec, bits),
        Command::Serve { stores, addr, price_per_gib, writable } => serve(&stores, addr, price_per_gib, writable),
        Command::Fetch { uri, field, t, region, level, precision, limits, out } => {
            let ds = Dataset::open(&uri)?;
            let field = field.unwrap_or_else(|| ds.descriptor().fields[0].name.clone());
            let mut q = Query::new(&field).at_timestep(t).with_precision(precision);
            if let Some(b) = region {
                q = q.with_region(parse_box(&b)?);
            }
            if let Some(l) = level {
                q = q.at_level(l);
            }
            let r = ds.read(&q, &limits.constraints())?;
            let vol = RawVolume::new(&field, t, r.plan.counts.clone(), r.fill, r.values)?;
            vol.save(&out)?;
            eprintln!(
                "level {} (requested {}), replica {}, {} samples, {} requests, {} wire bytes",
                r.plan.level,
                r.plan.requested_level,
                r.plan.replica,
                vol.len(),
                r.stats.requests,
                r.stats.wire_bytes
            );
            Ok(())
        }
        Command::Info { uri } => {
            let ds = Dataset::open(&uri)?;
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&ds.fdo())?);
            Ok(())
        }
        Command::Bench { study } => bench(study),
        Command::Psnr { raw, uri, replica } => {
            let raw = RawVolume::load(&raw)?;
            let ds = Dataset::open(&uri)?;
            let report = verify_roundtrip(&raw, ds.descriptor(), &**ds.store(), &replica)?;
            if !report.corrupt_blocks.is_empty() || !report.missing_blocks.is_empty() {
                bail!(
                    "{} corrupt and {} missing blocks in replica {replica}",
                    report.corrupt_blocks.len(),
                    report.missing_blocks.len()
                );
            }
            let psnr = report.psnr_db.map_or("inf".to_string(), |p| format!("{p:.3}"));
            println!("replica={replica} psnr_db={psnr} max_abs_error={}", report.max_abs_error);
            Ok(())
        }
        Command::Synth { out, extents, seed, kind, descriptor, id, block_bits } => {
            let raw = synth_volume(&extents, seed, kind);
            raw.save(&out)?;
            if let Some(path) = descriptor {
                let names = ['x', 'y', 'z', 'u', 'v', 'w'];
                if extents.len() > names.len() {
                    bail!("at most {} axes", names.len());
                }
                let axes: Vec<(char, u64)> = names.iter().copied().zip(extents.iter().copied()).collect();
                let fields = vec![FieldDesc { name: raw.field.clone(), fill: raw.fill }];
                let d = DatasetDescriptor::new(&id, &axes, fields, 1, block_bits)?;
                std::fs::write(&path, d.to_json()).with_context(|| path.display().to_string())?;
            }
            Ok(())
        }
    }
}

fn parse_box(s: &str) -> Result<Region> {
    let ranges = s
        .split(',')
        .map(|part| {
            let (lo, hi) = part.split_once(':').ok_or_else(|| anyhow!("bad range '{part}', expected lo:hi"))?;
            Ok(lo.trim().parse::<u64>()?..hi.trim().parse::<u64>()?)
        })
        .collect::<Result<Vec<_>>>()
        .with_context(|| format!("bad --box '{s}'"))?;
    Ok(Region::new(ranges))
}

fn load_store(root: &Path, writable: bool) -> Result<(DatasetDescriptor, DirStore)> {
    let store = if writable { DirStore::open(root) } else { DirStore::open_read_only(root) }
        .with_context(|| format!("store {}", root.display()))?;
    let path = root.join(DESCRIPTOR_FILE);
    let bytes = std::fs::read(&path).with_context(|| path.display().to_string())?;
    let desc = DatasetDescriptor::from_json(&bytes).with_context(|| path.display().to_string())?;
    Ok((desc, store))
}

fn convert(raw: &Path, descriptor: &Path, store: &Path, codec: CodecSpec) -> Result<()> {
    let raw = RawVolume::load(raw)?;
    let bytes = std::fs::read(descriptor).with_context(|| descriptor.display().to_string())?;
    let mut desc = DatasetDescriptor::from_json(&bytes).with_context(|| descriptor.display().to_string())?;
    let store = DirStore::create(store)?;
    let r = ingest(&raw, &mut desc, &store, codec)?;
    println!(
        "{}: {} blocks, {} samples ({:.1}% padding), {} -> {} bytes in {} pass(es), {:.1} MiB/s",
        r.replica,
        r.blocks_written,
        r.samples_written,
        100.0 * r.padded_fraction(),
        r.raw_bytes,
        r.encoded_bytes,
        r.passes,
        r.throughput_mib_s()
    );
    Ok(())
}

fn replica(root: &Path, codec: &str, bits: Option<u8>) -> Result<()> {
    let codec: CodecSpec = match (codec, bits) {
        ("truncate", Some(p)) => CodecSpec::truncate(p as u32)?,
        ("truncate", None) => bail!("truncate needs -p <bits>"),
        (c, None) => c.parse()?,
        (c, Some(_)) => bail!("-p only applies to truncate, not {c}"),
    };
    let (mut desc, store) = load_store(root, true)?;
    let s = make_replica(&mut desc, &store, codec, true)?;
    println!(
        "{}: {} blocks, {} -> {} bytes, factor {:.3}",
        s.replica,
        s.blocks,
        s.raw_bytes,
        s.encoded_bytes,
        s.factor()
    );
    Ok(())
}

fn serve(roots: &[PathBuf], addr: SocketAddr, price_per_gib: f64, writable: bool) -> Result<()> {
    let state = AppState::new(price_per_gib).writable(writable);
    for root in roots {
        let (desc, store) = load_store(root, writable)?;
        let id = desc.id.clone();
        state.insert(Dataset::with_descriptor(&id, desc, Arc::new(store), OpenOptions::default())?)?;
    }
    idxfabric_service::serve_blocking(addr, state, |bound| {
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
    })?;
    Ok(())
}

fn bench(study: Study) -> Result<()> {
    let stdout = std::io::stdout();
    match study {
        Study::Blocksize { source, min_k, max_k, codec } => {
            let raw = source.volume(&[256, 256, 256])?;
            let ks: Vec<u32> = (min_k..=max_k).collect();
            let profile = StoreProfile::remote(source.latency_ms, source.bandwidth, 0.0);
            let rows = bench_blocksize(&raw, &ks, profile, codec)?;
            write_blocksize_csv(&rows, stdout.lock())?;
        }
        Study::Locations { source, block_bits, levels } => {
            let raw = source.volume(&[64, 64, 64])?;
            let names = ['x', 'y', 'z', 'u', 'v', 'w'];
            let axes: Vec<(char, u64)> = names.iter().copied().zip(raw.extents.iter().copied()).collect();
            let fields = vec![FieldDesc { name: raw.field.clone(), fill: raw.fill }];
            let mut desc = DatasetDescriptor::new("bench", &axes, fields, raw.timestep + 1, block_bits)?;
            let local = Arc::new(MemStore::new());
            ingest(&raw, &mut desc, &*local, CodecSpec::Lossless)?;
            let profile = StoreProfile::remote(source.latency_ms, source.bandwidth, 0.0);
            let remote = Arc::new(MemStore::with_profile(profile));
            copy_dataset(&desc, &*local, &*remote)?;
            let cache_dir = tempfile::tempdir()?;
            let open = |store: Arc<MemStore>, cached: bool| {
                let options = OpenOptions {
                    cache: cached.then(|| CacheConfig {
                        dir: cache_dir.path().to_path_buf(),
                        capacity_bytes: DEFAULT_CACHE_BYTES,
                    }),
                    retries: 0,
                };
                Dataset::with_descriptor("bench", desc.clone(), store, options)
            };
            let m = desc.total_bits();
            let levels = if levels.is_empty() { (0..=m).rev().step_by(2).collect() } else { levels };
            let setup = LocationSetup {
                local: &open(local.clone(), false)?,
                remote: &open(remote.clone(), false)?,
                cached: &open(remote, true)?,
                field: raw.field.clone(),
                timestep: raw.timestep,
                levels,
            };
            let rows = bench_locations(&setup)?;
            write_locations_csv(&rows, stdout.lock())?;
        }
    }
    Ok(())
}
