use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use iealm::analysis::{
    corpus_means, exact_log2, key_count, key_space_size, load_corpus, scientific, sigma_coverage,
    PrecisionSpec, NATURAL_IMAGE_INTERVALS,
};
use iealm::attack::{recover_plaintext, run_attack_with, AttackOptions, EquivalentKey};
use iealm::cipher::{decrypt_image, encrypt_image, SumsMode};
use iealm::image::{read_image, write_image};
use iealm::keystream::{ChannelSums, KeyMaterial};
use iealm::lclm::{build_functional_graph, graph_stats, validate_cipher_b, QuantizedMapConfig, Quantizer, Rational};
use iealm::oracle::{serve, EncryptionOracle, LocalOracle, OracleConfig, OracleMode, RemoteOracle};
use iealm::{Error, Result};

#[derive(Parser)]
#[command(name = "iealm", version, about = "IEALM image cipher and its chosen-plaintext break")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encrypt a PPM/PGM/raw image.
    Encrypt(CryptArgs),
    /// Decrypt a PPM/PGM/raw image.
    Decrypt(CryptArgs),
    /// Recover an equivalent key from an encryption oracle.
    Attack(AttackArgs),
    /// Serve an encryption oracle over TCP.
    Serve(ServeArgs),
    /// Functional graph of the quantized z-line.
    Graph(GraphArgs),
    /// Key-space sizes.
    Keyspace(KeyspaceArgs),
    /// Channel-mean statistics of a directory of images.
    Corpus(CorpusArgs),
}

#[derive(Args)]
struct CryptArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    b: f64,
    /// Channel sums `r,g,b`.
    #[arg(long, conflicts_with = "faithful")]
    sums: Option<ChannelSums>,
    /// Take the sums from the input image (encryption only).
    #[arg(long)]
    faithful: bool,
}

#[derive(Clone, Copy)]
struct Size {
    height: usize,
    width: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (m, n) = s.split_once(['x', 'X']).ok_or("expected MxN")?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        let size = Size {
            height: parse(m)?,
            width: parse(n)?,
        };
        if size.height * size.width < 2 {
            return Err("image needs at least two pixels".into());
        }
        Ok(size)
    }
}

#[derive(Args)]
struct OracleKeyArgs {
    #[arg(long, default_value_t = 1.99)]
    b: f64,
    #[arg(long, default_value = "29676,9202,62299")]
    sums: ChannelSums,
    #[arg(long, default_value = "256x256")]
    size: Size,
    /// Re-derive the keystream from every submitted image.
    #[arg(long)]
    faithful: bool,
}

impl OracleKeyArgs {
    fn config(&self) -> Result<OracleConfig> {
        Ok(OracleConfig {
            mode: if self.faithful { OracleMode::Faithful } else { OracleMode::Frozen },
            key: KeyMaterial::new(self.b, self.sums)?,
            height: self.size.height,
            width: self.size.width,
        })
    }
}

#[derive(Args)]
struct AttackArgs {
    /// `local` or `host:port` of a running `iealm serve`.
    #[arg(long, default_value = "local")]
    oracle: String,
    #[command(flatten)]
    key: OracleKeyArgs,
    /// Pack three experiments into each RGB query.
    #[arg(long)]
    packing: bool,
    /// Binary search for the low nibble of V instead of the threshold sweep.
    #[arg(long)]
    adaptive_vl: bool,
    /// Query bit plane 1 of every permutation.
    #[arg(long)]
    all_planes: bool,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    save_eqkey: Option<PathBuf>,
    /// Use a saved equivalent key instead of querying an oracle.
    #[arg(long, conflicts_with_all = ["save_eqkey", "report"])]
    load_eqkey: Option<PathBuf>,
    /// Cipher-image to decrypt with the recovered key.
    #[arg(long, requires = "out")]
    decrypt: Option<PathBuf>,
    /// Where to write the decrypted image.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    #[command(flatten)]
    key: OracleKeyArgs,
}

#[derive(Args)]
struct GraphArgs {
    /// Fractional bits per coordinate.
    #[arg(long)]
    n: u32,
    /// Control parameter as `p/q` or a decimal.
    #[arg(long, default_value = "511/256")]
    b: Rational,
    #[arg(long, default_value = "floor")]
    quantizer: Quantizer,
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct KeyspaceArgs {
    /// Arithmetic precision L in bits.
    #[arg(long, default_value_t = 32)]
    bits: u32,
    #[arg(long, default_value = "256x256")]
    size: Size,
}

#[derive(Args)]
struct CorpusArgs {
    dir: PathBuf,
    #[arg(long, default_value_t = 8.0)]
    bin_width: f64,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Format(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| with_path(path, e.into()))
}

fn cmd_crypt(args: CryptArgs, encrypt: bool) -> Result<()> {
    validate_cipher_b(args.b)?;
    let img = read_image(&args.input)?;
    let out = if encrypt {
        let mode = match (args.sums, args.faithful) {
            (Some(s), _) => SumsMode::Frozen(s),
            (None, true) => {
                let s = img.channel_sums();
                println!("sums {s}");
                SumsMode::Faithful
            }
            (None, false) => {
                return Err(Error::InvalidParameter("give --sums r,g,b or --faithful".into()))
            }
        };
        encrypt_image(&img, args.b, mode)?
    } else {
        let sums = args
            .sums
            .ok_or_else(|| Error::InvalidParameter("decryption needs --sums r,g,b".into()))?;
        decrypt_image(&img, args.b, sums)?
    };
    write_image(&args.output, &out)
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    let key = if let Some(path) = &args.load_eqkey {
        EquivalentKey::load(path).map_err(|e| with_path(path, e))?
    } else {
        let mut oracle: Box<dyn EncryptionOracle> = if args.oracle == "local" {
            Box::new(LocalOracle::new(args.key.config()?)?)
        } else {
            Box::new(RemoteOracle::connect(args.oracle.as_str())?)
        };
        let opts = AttackOptions {
            packing: args.packing,
            adaptive_vl: args.adaptive_vl,
            all_planes: args.all_planes,
        };
        let (key, report) = run_attack_with(oracle.as_mut(), opts)?;
        let json = report.to_json()?;
        println!("{json}");
        if let Some(path) = &args.report {
            write_text(path, &json)?;
        }
        if let Some(path) = &args.save_eqkey {
            key.save(path).map_err(|e| with_path(path, e))?;
        }
        key
    };
    if let (Some(input), Some(out)) = (&args.decrypt, &args.out) {
        let plain = recover_plaintext(&read_image(input)?, &key)?;
        write_image(out, &plain)?;
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let cfg = args.key.config()?;
    eprintln!(
        "serving {}x{} {:?} oracle on {}",
        cfg.height, cfg.width, cfg.mode, args.listen
    );
    let log = serve(&args.listen, cfg)?;
    println!("{}", serde_json::to_string_pretty(&log)?);
    Ok(())
}

fn cmd_graph(args: GraphArgs) -> Result<()> {
    let cfg = QuantizedMapConfig::new(args.n, args.b, args.quantizer)?;
    let g = build_functional_graph(&cfg);
    let stats = graph_stats(&g);
    if let Some(path) = &args.dot {
        write_text(path, &g.to_dot())?;
    }
    if let Some(path) = &args.json {
        write_text(path, &serde_json::to_string(&g.to_json(&stats))?)?;
    }
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn cmd_keyspace(args: KeyspaceArgs) -> Result<()> {
    let (m, n) = (args.size.height as u64, args.size.width as u64);
    let count = key_count(m, n);
    let space = key_space_size(PrecisionSpec { bits: args.bits }, m, n);
    let coverage = sigma_coverage(&NATURAL_IMAGE_INTERVALS);
    let (count_m, count_e) = scientific(&count);
    let (space_m, space_e) = scientific(&space);
    let report = serde_json::json!({
        "M": m,
        "N": n,
        "L": args.bits,
        "key_count": count.to_string(),
        "key_count_approx": format!("{count_m:.3}e{count_e}"),
        "key_space_size": space.to_string(),
        "key_space_size_approx": format!("{space_m:.3}e{space_e}"),
        "key_space_log2": exact_log2(&space),
        "sigma_coverage": coverage,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_corpus(args: CorpusArgs) -> Result<()> {
    let images = load_corpus(&args.dir).map_err(|e| with_path(&args.dir, e))?;
    let stats = corpus_means(&images, args.bin_width)?;
    let json = serde_json::to_string_pretty(&stats)?;
    if let Some(path) = &args.json {
        write_text(path, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encrypt(a) => cmd_crypt(a, true),
        Command::Decrypt(a) => cmd_crypt(a, false),
        Command::Attack(a) => cmd_attack(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Graph(a) => cmd_graph(a),
        Command::Keyspace(a) => cmd_keyspace(a),
        Command::Corpus(a) => cmd_corpus(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
