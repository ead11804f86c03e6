use std::io::Write;
use std::time::Instant;

use super::HarnessError;

/// CSV table ending in a `# config_hash=<hex> seed=<seed>` comment line.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Column index by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_to<W: Write>(&self, w: W, config_hash: &str, seed: u64) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for row in &self.rows {
            out.write_record(row)?;
        }
        let mut w = out.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        writeln!(w, "# config_hash={config_hash} seed={seed}")?;
        Ok(())
    }

    pub fn to_csv(&self, config_hash: &str, seed: u64) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf, config_hash, seed).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Median wall time in milliseconds of `repeats` runs after two warmups.
pub fn median_ms<T>(repeats: usize, mut f: impl FnMut() -> T) -> f64 {
    for _ in 0..2 {
        std::hint::black_box(f());
    }
    let mut times: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        (times[n / 2 - 1] + times[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_trailer() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        assert_eq!(t.to_csv("ab12", 7), "a,b\n1,\"x,y\"\n# config_hash=ab12 seed=7\n");
    }

    #[test]
    fn median_counts_calls() {
        let mut calls = 0;
        let m = median_ms(5, || calls += 1);
        assert_eq!(calls, 7);
        assert!(m >= 0.0);
    }
}
