//! Deterministic generator for the files under `fixtures/`.
//!
//! The universe transcripts are stand-ins whose vote counts make the voted
//! universes equal the reference ticker sets. The price table is synthetic: a
//! sector factor model sampled weekly, plus index and fund series.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use chrono::{Datelike, Days, NaiveDate, Weekday};
use folio_core::universe::{
    render_prompt, request_weights, select_top_k, tally_responses, ChatClient, ChatTranscript, PromptId,
    PromptTemplate, RecordingClient, TickerRemap, TranscriptMode,
};
use folio_core::UniverseError;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const SEED: u64 = 20230731;
pub const ROUNDS: usize = 30;

/// Reference portfolios: ticker, raw model weights for the 15/30/45 universes, and the
/// printed normalized percentages.
pub const REFERENCE_WEIGHTS: [(&str, [Option<f64>; 3], [Option<f64>; 3]); 45] = {
    const fn r(w15: f64, w30: f64, w45: f64, p15: f64, p30: f64, p45: f64) -> ([Option<f64>; 3], [Option<f64>; 3]) {
        ([Some(w15), Some(w30), Some(w45)], [Some(p15), Some(p30), Some(p45)])
    }
    const fn r2(w30: f64, w45: f64, p30: f64, p45: f64) -> ([Option<f64>; 3], [Option<f64>; 3]) {
        ([None, Some(w30), Some(w45)], [None, Some(p30), Some(p45)])
    }
    const fn r3(w45: f64, p45: f64) -> ([Option<f64>; 3], [Option<f64>; 3]) {
        ([None, None, Some(w45)], [None, None, Some(p45)])
    }
    macro_rules! row {
        ($t:literal, $x:expr) => {
            ($t, $x.0, $x.1)
        };
    }
    [
        row!("MSFT", r(0.10, 0.07, 0.06, 9.17, 5.04, 4.08)),
        row!("KO", r(0.05, 0.04, 0.03, 4.59, 2.88, 2.04)),
        row!("DIS", r(0.05, 0.04, 0.03, 4.59, 2.88, 2.04)),
        row!("ADBE", r(0.05, 0.06, 0.04, 4.59, 4.32, 2.72)),
        row!("TSLA", r(0.05, 0.05, 0.04, 4.59, 3.6, 2.72)),
        row!("GOOGL", r(0.08, 0.06, 0.04, 7.34, 4.32, 2.72)),
        row!("HD", r(0.07, 0.04, 0.03, 6.42, 2.88, 2.04)),
        row!("NVDA", r(0.08, 0.05, 0.04, 7.34, 3.6, 2.72)),
        row!("JPM", r(0.07, 0.05, 0.03, 6.42, 3.6, 2.04)),
        row!("AAPL", r(0.10, 0.07, 0.06, 9.17, 5.04, 4.08)),
        row!("V", r(0.08, 0.05, 0.04, 7.34, 3.6, 2.72)),
        row!("PG", r(0.07, 0.04, 0.03, 6.42, 2.88, 2.04)),
        row!("JNJ", r(0.07, 0.05, 0.04, 6.42, 3.6, 2.72)),
        row!("AMZN", r(0.10, 0.06, 0.06, 9.17, 4.32, 4.08)),
        row!("UNH", r(0.07, 0.05, 0.04, 6.42, 3.6, 2.72)),
        row!("NFLX", r2(0.04, 0.03, 2.88, 2.04)),
        row!("T", r2(0.04, 0.02, 2.88, 1.36)),
        row!("MRK", r2(0.04, 0.03, 2.88, 2.04)),
        row!("CRM", r2(0.04, 0.03, 2.88, 2.04)),
        row!("WMT", r2(0.04, 0.03, 2.88, 2.04)),
        row!("GS", r2(0.04, 0.03, 2.88, 2.04)),
        row!("MMM", r2(0.04, 0.03, 2.88, 2.04)),
        row!("CSCO", r2(0.04, 0.03, 2.88, 2.04)),
        row!("XOM", r2(0.04, 0.03, 2.88, 2.04)),
        row!("META", r2(0.05, 0.03, 3.60, 2.04)),
        row!("INTC", r2(0.04, 0.03, 2.88, 2.04)),
        row!("BA", r2(0.04, 0.03, 2.88, 2.04)),
        row!("MCD", r2(0.04, 0.03, 2.88, 2.04)),
        row!("PFE", r2(0.04, 0.03, 2.88, 2.04)),
        row!("CVX", r2(0.04, 0.03, 2.88, 2.04)),
        row!("LMT", r3(0.03, 2.04)),
        row!("AXP", r3(0.03, 2.04)),
        row!("MA", r3(0.03, 2.04)),
        row!("ABT", r3(0.03, 2.04)),
        row!("IBM", r3(0.02, 1.36)),
        row!("GE", r3(0.02, 1.36)),
        row!("SBUX", r3(0.03, 2.04)),
        row!("VZ", r3(0.02, 1.36)),
        row!("BRK-B", r3(0.03, 2.04)),
        row!("PYPL", r3(0.03, 2.04)),
        row!("CAT", r3(0.03, 2.04)),
        row!("PEP", r3(0.03, 2.04)),
        row!("ORCL", r3(0.03, 2.04)),
        row!("NKE", r3(0.03, 2.04)),
        row!("AVGO", r3(0.03, 2.04)),
    ]
};

pub const SIZES: [usize; 3] = [15, 30, 45];

/// Constituents that the stand-in transcripts mention less often than the
/// reference names.
pub const DECOYS: [&str; 15] = [
    "COST", "LLY", "ABBV", "TMO", "HON", "QCOM", "TXN", "AMD", "LOW", "UPS", "AMGN", "SPGI", "BLK", "DE", "ISRG",
];

/// Ticker, company name, GICS sector.
pub const COMPANIES: [(&str, &str, &str); 60] = [
    ("MSFT", "Microsoft", "Information Technology"),
    ("KO", "Coca-Cola", "Consumer Staples"),
    ("DIS", "Walt Disney", "Communication Services"),
    ("ADBE", "Adobe", "Information Technology"),
    ("TSLA", "Tesla", "Consumer Discretionary"),
    ("GOOGL", "Alphabet", "Communication Services"),
    ("HD", "Home Depot", "Consumer Discretionary"),
    ("NVDA", "NVIDIA", "Information Technology"),
    ("JPM", "JPMorgan Chase", "Financials"),
    ("AAPL", "Apple", "Information Technology"),
    ("V", "Visa", "Financials"),
    ("PG", "Procter & Gamble", "Consumer Staples"),
    ("JNJ", "Johnson & Johnson", "Health Care"),
    ("AMZN", "Amazon", "Consumer Discretionary"),
    ("UNH", "UnitedHealth Group", "Health Care"),
    ("NFLX", "Netflix", "Communication Services"),
    ("T", "AT&T", "Communication Services"),
    ("MRK", "Merck", "Health Care"),
    ("CRM", "Salesforce", "Information Technology"),
    ("WMT", "Walmart", "Consumer Staples"),
    ("GS", "Goldman Sachs", "Financials"),
    ("MMM", "3M", "Industrials"),
    ("CSCO", "Cisco Systems", "Information Technology"),
    ("XOM", "Exxon Mobil", "Energy"),
    ("META", "Meta Platforms", "Communication Services"),
    ("INTC", "Intel", "Information Technology"),
    ("BA", "Boeing", "Industrials"),
    ("MCD", "McDonald's", "Consumer Discretionary"),
    ("PFE", "Pfizer", "Health Care"),
    ("CVX", "Chevron", "Energy"),
    ("LMT", "Lockheed Martin", "Industrials"),
    ("AXP", "American Express", "Financials"),
    ("MA", "Mastercard", "Financials"),
    ("ABT", "Abbott Laboratories", "Health Care"),
    ("IBM", "IBM", "Information Technology"),
    ("GE", "General Electric", "Industrials"),
    ("SBUX", "Starbucks", "Consumer Discretionary"),
    ("VZ", "Verizon", "Communication Services"),
    ("BRK-B", "Berkshire Hathaway", "Financials"),
    ("PYPL", "PayPal", "Financials"),
    ("CAT", "Caterpillar", "Industrials"),
    ("PEP", "PepsiCo", "Consumer Staples"),
    ("ORCL", "Oracle", "Information Technology"),
    ("NKE", "Nike", "Consumer Discretionary"),
    ("AVGO", "Broadcom", "Information Technology"),
    ("COST", "Costco", "Consumer Staples"),
    ("LLY", "Eli Lilly", "Health Care"),
    ("ABBV", "AbbVie", "Health Care"),
    ("TMO", "Thermo Fisher Scientific", "Health Care"),
    ("HON", "Honeywell", "Industrials"),
    ("QCOM", "Qualcomm", "Information Technology"),
    ("TXN", "Texas Instruments", "Information Technology"),
    ("AMD", "Advanced Micro Devices", "Information Technology"),
    ("LOW", "Lowe's", "Consumer Discretionary"),
    ("UPS", "United Parcel Service", "Industrials"),
    ("AMGN", "Amgen", "Health Care"),
    ("SPGI", "S&P Global", "Financials"),
    ("BLK", "BlackRock", "Financials"),
    ("DE", "Deere", "Industrials"),
    ("ISRG", "Intuitive Surgical", "Health Care"),
];

const INDICES: [&str; 3] = ["^GSPC", "^DJI", "^IXIC"];

/// Reference tickers of the `size`-stock universe, in table order.
pub fn reference_universe(size: usize) -> Vec<&'static str> {
    let col = size_column(size);
    REFERENCE_WEIGHTS.iter().filter(|r| r.1[col].is_some()).map(|r| r.0).collect()
}

/// Raw model weights for `ticker` in the `size`-stock universe.
pub fn reference_raw_weight(ticker: &str, size: usize) -> Option<f64> {
    let col = size_column(size);
    REFERENCE_WEIGHTS.iter().find(|r| r.0 == ticker).and_then(|r| r.1[col])
}

fn size_column(size: usize) -> usize {
    SIZES
        .iter()
        .position(|&s| s == size)
        .unwrap_or_else(|| panic!("the reference table has no {size}-stock column"))
}

fn company(ticker: &str) -> &'static str {
    COMPANIES.iter().find(|c| c.0 == ticker).map_or("Unknown", |c| c.1)
}

/// Writes every fixture file into `dir`.
pub fn generate(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("transcripts"))?;
    write_constituents(dir)?;
    write_sectors(dir)?;
    write_reference_weights(dir)?;
    for (i, &size) in SIZES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + i as u64);
        let universe = universe_transcript(size, &mut rng);
        universe.save(&dir.join("transcripts").join(format!("universe_{size}.txt")))?;
        let constituents: BTreeSet<String> = COMPANIES.iter().map(|c| c.0.to_owned()).collect();
        let tally = tally_responses(&universe, &constituents, &TickerRemap::default());
        let voted = select_top_k(&tally, size)?;
        weights_transcript(&voted)?.save(&dir.join("transcripts").join(format!("weights_{size}.txt")))?;
    }
    write_prices(dir)?;
    Ok(())
}

fn write_constituents(dir: &Path) -> Result<()> {
    let mut out = String::new();
    for (t, _, _) in COMPANIES {
        writeln!(out, "{t}")?;
    }
    std::fs::write(dir.join("constituents.txt"), out)?;
    Ok(())
}

fn write_sectors(dir: &Path) -> Result<()> {
    let mut out = String::from("ticker,sector\n");
    for (t, _, s) in COMPANIES {
        writeln!(out, "{t},{s}")?;
    }
    std::fs::write(dir.join("sectors.csv"), out)?;
    Ok(())
}

fn write_reference_weights(dir: &Path) -> Result<()> {
    let mut out = String::from("ticker,pct_15,pct_30,pct_45\n");
    for (t, _, printed) in REFERENCE_WEIGHTS {
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{t},{},{},{}", cell(printed[0]), cell(printed[1]), cell(printed[2]))?;
    }
    std::fs::write(dir.join("reference_weights.csv"), out)?;
    Ok(())
}

/// Per-ticker number of rounds that mention it.
fn vote_counts(size: usize, rng: &mut ChaCha8Rng) -> Vec<(&'static str, usize)> {
    let mut counts: Vec<(&'static str, usize)> = Vec::new();
    for t in reference_universe(size) {
        // Half of META's mentions use FB, which leaves 10 without the remap.
        let c = if t == "META" { 20 } else { rng.random_range(16..=ROUNDS) };
        counts.push((t, c));
    }
    let table: BTreeSet<&str> = counts.iter().map(|c| c.0).collect();
    for (t, _, _) in COMPANIES {
        if !table.contains(t) {
            let c = if t == "COST" { 12 } else { rng.random_range(1..=8) };
            counts.push((t, c));
        }
    }
    counts
}

fn universe_transcript(size: usize, rng: &mut ChaCha8Rng) -> ChatTranscript {
    let counts = vote_counts(size, rng);
    let mut rounds: Vec<Vec<&'static str>> = vec![Vec::new(); ROUNDS];
    for &(t, c) in &counts {
        for r in sample(rng, ROUNDS, c) {
            rounds[r].push(t);
        }
    }
    // META keeps its reference rank only once the old FB ticker is remapped.
    let meta_rounds: Vec<usize> = (0..ROUNDS).filter(|&r| rounds[r].contains(&"META")).collect();
    let fb_rounds: BTreeSet<usize> = meta_rounds.iter().copied().step_by(2).collect();
    let twtr_rounds: BTreeSet<usize> = sample(rng, ROUNDS, 3).into_iter().collect();

    let request = PromptTemplate::standard(PromptId::UniverseRequest);
    let extract = PromptTemplate::standard(PromptId::TickerExtract);
    let mut transcript = ChatTranscript::new(TranscriptMode::Live);
    for (r, names) in rounds.iter_mut().enumerate() {
        shuffle(names, rng);
        let shown: Vec<&str> = names
            .iter()
            .map(|&t| if t == "META" && fb_rounds.contains(&r) { "FB" } else { t })
            .chain(twtr_rounds.contains(&r).then_some("TWTR"))
            .collect();
        let mut fund = format!(
            "Here is a hypothetical fund of {} S&P 500 stocks that aims to outperform the index:\n\n",
            shown.len()
        );
        for (i, t) in shown.iter().enumerate() {
            let name = match *t {
                "FB" => "Facebook",
                "TWTR" => "Twitter",
                t => company(t),
            };
            writeln!(fund, "{}. {name} ({t})", i + 1).unwrap();
        }
        fund.push_str("\nThe selection balances growth, quality and sector diversification.");
        let prompt = render_prompt(&request, &size.to_string()).expect("template has its placeholder");
        transcript.push(PromptId::UniverseRequest, prompt, fund.clone());
        let prompt = render_prompt(&extract, &fund).expect("template has its placeholder");
        transcript.push(PromptId::TickerExtract, prompt, shown.join(", "));
    }
    transcript
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        items.swap(i, rng.random_range(0..=i));
    }
}

/// Scripted chat that answers the two weight prompts for `universe`.
struct WeightScript {
    universe: Vec<String>,
    size: usize,
}

impl ChatClient for WeightScript {
    fn chat(&mut self, id: PromptId, _prompt: &str) -> Result<String, UniverseError> {
        let table: Vec<(&str, f64)> = reference_universe(self.size)
            .into_iter()
            .map(|t| (t, reference_raw_weight(t, self.size).expect("reference ticker")))
            .collect();
        debug_assert_eq!(table.len(), self.universe.len());
        Ok(match id {
            PromptId::WeightRequest => {
                let mut text = String::from("Here is a hypothetical allocation for the model portfolio:\n\n");
                for (i, (t, w)) in table.iter().enumerate() {
                    writeln!(text, "{}. {} ({t}): {w:.2}", i + 1, company(t)).unwrap();
                }
                text.push_str(
                    "\nStrategy: larger weights go to established technology leaders with strong growth, \
                     while defensive consumer and health care names add stability.",
                );
                text
            }
            PromptId::WeightExtract => table
                .iter()
                .map(|(t, w)| format!("{t},{w:.2}"))
                .collect::<Vec<_>>()
                .join(","),
            other => return Err(UniverseError::MalformedWeights(format!("unexpected prompt {other}"))),
        })
    }
}

fn weights_transcript(universe: &[String]) -> Result<ChatTranscript> {
    let mut client = RecordingClient::new(WeightScript {
        universe: universe.to_vec(),
        size: universe.len(),
    });
    request_weights(&mut client, universe, &TickerRemap::default()).context("scripted weight request")?;
    Ok(client.into_transcript())
}

/// Friday closes from August 2016 to July 2023.
pub fn price_dates() -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2016, 8, 5).expect("valid date");
    debug_assert_eq!(d.weekday(), Weekday::Fri);
    let end = NaiveDate::from_ymd_opt(2023, 7, 28).expect("valid date");
    let mut out = Vec::new();
    while d <= end {
        out.push(d);
        d = d + Days::new(7);
    }
    out
}

const IN_SAMPLE_END: NaiveDate = NaiveDate::from_ymd_opt(2021, 8, 31).expect("valid date");

fn write_prices(dir: &Path) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x5eed);
    let dates = price_dates();
    let t = dates.len() - 1;
    let sectors: Vec<&str> = {
        let mut s: Vec<&str> = COMPANIES.iter().map(|c| c.2).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let std_normal = Normal::new(0.0, 1.0)?;
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| std_normal.sample(rng)).collect() };
    // Each segment is centred so its realised market drift is the target
    // rather than a noisy draw: strong before the split, near flat after it.
    let split = dates.iter().filter(|d| **d <= IN_SAMPLE_END).count() - 1;
    let mut market = draw(t, &mut rng);
    for (range, drift) in [(0..split, 0.0016), (split..t, 0.0004)] {
        let seg = &mut market[range];
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        seg.iter_mut().for_each(|z| *z = drift + 0.021 * (*z - mean));
    }
    let sector_shocks: Vec<Vec<f64>> = sectors.iter().map(|_| draw(t, &mut rng)).collect();

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut stock_returns: Vec<Vec<f64>> = Vec::new();
    for (ticker, _, sector) in COMPANIES {
        let alpha = rng.random_range(-0.0015..0.0025);
        let beta = rng.random_range(0.6..1.5);
        let s_load = rng.random_range(0.005..0.02);
        let idio = rng.random_range(0.012..0.035);
        let si = sectors.iter().position(|s| *s == sector).expect("known sector");
        let eps = draw(t, &mut rng);
        let r: Vec<f64> = (0..t)
            .map(|k| (alpha + beta * market[k] + s_load * sector_shocks[si][k] + idio * eps[k]).max(-0.6))
            .collect();
        stock_returns.push(r.clone());
        columns.push((ticker.to_owned(), r));
    }
    let n = stock_returns.len() as f64;
    let average: Vec<f64> = (0..t).map(|k| stock_returns.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    for (i, idx) in INDICES.iter().enumerate() {
        let tilt = [1.0, 0.9, 1.2][i];
        let noise = draw(t, &mut rng);
        let r = (0..t)
            .map(|k| tilt * (market[k] - 0.0006) + 0.002 * noise[k] + 0.1 * (average[k] - market[k]))
            .collect();
        columns.push(((*idx).to_owned(), r));
    }
    for fund in folio_core::backtest::POPULAR_FUNDS {
        let beta = rng.random_range(0.8..1.15);
        let fee = rng.random_range(0.0001..0.0004);
        let noise = draw(t, &mut rng);
        let r = (0..t).map(|k| beta * market[k] - fee + 0.004 * noise[k]).collect();
        columns.push((fund.to_owned(), r));
    }

    let mut out = String::from("date");
    for (name, _) in &columns {
        write!(out, ",{name}")?;
    }
    out.push('\n');
    let mut levels: Vec<f64> = columns.iter().map(|_| 100.0).collect();
    for (k, date) in dates.iter().enumerate() {
        write!(out, "{date}")?;
        for (j, (_, r)) in columns.iter().enumerate() {
            if k > 0 {
                levels[j] *= 1.0 + r[k - 1];
            }
            write!(out, ",{:.4}", levels[j])?;
        }
        out.push('\n');
    }
    std::fs::write(dir.join("prices.csv"), out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_percentages_match_raw_weights() {
        for size in SIZES {
            let col = size_column(size);
            let raw: Vec<f64> = reference_universe(size)
                .iter()
                .map(|t| reference_raw_weight(t, size).unwrap())
                .collect();
            let sum: f64 = raw.iter().sum();
            for (t, _, printed) in REFERENCE_WEIGHTS.iter().filter(|r| r.1[col].is_some()) {
                let w = reference_raw_weight(t, size).unwrap() / sum * 100.0;
                assert!((w - printed[col].unwrap()).abs() < 0.006, "{t} in {size}: {w} vs {:?}", printed[col]);
            }
        }
    }

    #[test]
    fn universes_are_nested() {
        assert_eq!(reference_universe(15).len(), 15);
        assert_eq!(reference_universe(30).len(), 30);
        assert_eq!(reference_universe(45).len(), 45);
        assert!(reference_universe(15).iter().all(|t| reference_universe(30).contains(t)));
        let decoys: BTreeSet<&str> = DECOYS.into_iter().collect();
        assert!(reference_universe(45).iter().all(|t| !decoys.contains(t)));
        assert_eq!(COMPANIES.len(), 45 + DECOYS.len());
    }
}
