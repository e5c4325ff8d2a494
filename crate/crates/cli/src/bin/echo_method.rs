//! Reference method for the harness wire protocol: answers every request with
//! the ground-truth mask it was sent, as scores.
//!
//! Options exercise the harness's failure handling:
//!
//! * `--sleep-ms N`: wait N ms before each response
//! * `--wrong-dims`: respond with a raster one pixel wider
//! * `--crash-after N`: exit with status 3 after answering N frames

use std::io::{self, BufReader, BufWriter, Write};
use std::thread;
use std::time::Duration;

use clap::Parser;
use streamseg::io::{decode_raster, encode_raster};
use streamseg::{LabelMask, ScoreMap};

#[derive(Debug, Parser)]
#[command(name = "streamseg-echo-method", version)]
struct Args {
    #[arg(long, default_value_t = 0)]
    sleep_ms: u64,
    #[arg(long)]
    wrong_dims: bool,
    #[arg(long)]
    crash_after: Option<u32>,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    let mut answered = 0;
    loop {
        let mut index = [0u8; 4];
        if io::Read::read_exact(&mut input, &mut index).is_err() {
            return Ok(());
        }
        let mask: LabelMask = decode_raster(&mut input)?;
        if args.crash_after == Some(answered) {
            std::process::exit(3);
        }
        if args.sleep_ms > 0 {
            thread::sleep(Duration::from_millis(args.sleep_ms));
        }
        let scores = if args.wrong_dims {
            ScoreMap::filled(mask.width() + 1, mask.height(), 0.0)
        } else {
            ScoreMap::from(&mask)
        };
        output.write_all(&index)?;
        output.write_all(&encode_raster(&scores))?;
        output.flush()?;
        answered += 1;
    }
}
