//! Study tables in CSV and aligned text form.

use std::io::{Read, Write};

use vofde_core::{SolverKind, StudyRow};

pub const HEADER: [&str; 10] = [
    "n",
    "solver",
    "error",
    "order",
    "cpu_m_seconds",
    "cpu_s_seconds",
    "s",
    "k",
    "band",
    "base",
];

/// One CSV record. Absent values are `None` and written as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub n: usize,
    pub solver: SolverKind,
    pub error: Option<f64>,
    pub order: Option<f64>,
    pub cpu_m_seconds: Option<f64>,
    pub cpu_s_seconds: Option<f64>,
    pub s: Option<usize>,
    pub k: Option<usize>,
    pub band: Option<usize>,
    pub base: Option<usize>,
}

impl From<&StudyRow> for CsvRow {
    fn from(r: &StudyRow) -> Self {
        Self {
            n: r.n,
            solver: r.solver,
            error: r.error,
            order: r.order,
            cpu_m_seconds: r.cpu_m,
            cpu_s_seconds: r.cpu_s,
            s: r.params.map(|p| p.s),
            k: r.params.map(|p| p.k),
            band: r.params.map(|p| p.band),
            base: r.params.map(|p| p.base),
        }
    }
}

/// Shortest round-trip scientific form.
pub fn fmt_float(x: f64) -> String {
    format!("{x:e}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn opt_int(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl CsvRow {
    pub fn fields(&self) -> [String; 10] {
        [
            self.n.to_string(),
            self.solver.name().to_string(),
            opt_float(self.error),
            opt_float(self.order),
            opt_float(self.cpu_m_seconds),
            opt_float(self.cpu_s_seconds),
            opt_int(self.s),
            opt_int(self.k),
            opt_int(self.band),
            opt_int(self.base),
        ]
    }
}

pub fn parse_solver(s: &str) -> Option<SolverKind> {
    match s {
        "fs" => Some(SolverKind::Fs),
        "fdac" => Some(SolverKind::Fdac),
        _ => None,
    }
}

pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: u64, msg: String) -> csv::Error {
    csv::Error::from(std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("record {line}: {msg}"),
    ))
}

pub fn read_csv<R: Read>(input: R) -> csv::Result<Vec<CsvRow>> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(HEADER) {
        return Err(parse_err(0, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 1;
        let float = |j: usize| -> csv::Result<Option<f64>> {
            match &rec[j] {
                "" => Ok(None),
                s => s
                    .parse()
                    .map(Some)
                    .map_err(|e| parse_err(line, format!("{}: {e}", HEADER[j]))),
            }
        };
        let int = |j: usize| -> csv::Result<Option<usize>> {
            match &rec[j] {
                "" => Ok(None),
                s => s
                    .parse()
                    .map(Some)
                    .map_err(|e| parse_err(line, format!("{}: {e}", HEADER[j]))),
            }
        };
        rows.push(CsvRow {
            n: int(0)?.ok_or_else(|| parse_err(line, "missing n".into()))?,
            solver: parse_solver(&rec[1])
                .ok_or_else(|| parse_err(line, format!("unknown solver {:?}", &rec[1])))?,
            error: float(2)?,
            order: float(3)?,
            cpu_m_seconds: float(4)?,
            cpu_s_seconds: float(5)?,
            s: int(6)?,
            k: int(7)?,
            band: int(8)?,
            base: int(9)?,
        });
    }
    Ok(rows)
}

/// Right-aligned text table.
pub fn write_text_table<W: Write>(header: &[&str], rows: &[Vec<String>], mut out: W) -> std::io::Result<()> {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(header.to_vec()))?;
    for r in rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

/// Study rows as a text table with compact number formatting.
pub fn write_study_table<W: Write>(rows: &[CsvRow], out: W) -> std::io::Result<()> {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.solver.name().to_string(),
                r.error.map(|e| format!("{e:.5e}")).unwrap_or_else(|| "-".into()),
                r.order.map(|o| format!("{o:.2}")).unwrap_or_default(),
                r.cpu_m_seconds.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into()),
                r.cpu_s_seconds.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into()),
                opt_int(r.s),
                opt_int(r.k),
                opt_int(r.band),
                opt_int(r.base),
            ]
        })
        .collect();
    write_text_table(&HEADER, &cells, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_exact() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "n,solver,error,order,cpu_m_seconds,cpu_s_seconds,s,k,band,base\n"
        );
    }

    #[test]
    fn absent_values_are_empty() {
        let row = CsvRow {
            n: 256,
            solver: SolverKind::Fs,
            error: Some(4.2e-6),
            order: None,
            cpu_m_seconds: Some(0.5),
            cpu_s_seconds: None,
            s: None,
            k: None,
            band: None,
            base: None,
        };
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "256,fs,4.2e-6,,5e-1,,,,,");
        assert_eq!(read_csv(text.as_bytes()).unwrap(), vec![row]);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
        let bad = "n,solver,error,order,cpu_m_seconds,cpu_s_seconds,s,k,band,base\n8,lu,,,,,,,,\n";
        assert!(read_csv(bad.as_bytes()).is_err());
        let bad = "n,solver,error,order,cpu_m_seconds,cpu_s_seconds,s,k,band,base\n8,fs,x,,,,,,,\n";
        assert!(read_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn text_table_aligns() {
        let mut buf = Vec::new();
        write_text_table(&["a", "bbb"], &[vec!["10".into(), "1".into()]], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), " a  bbb\n10    1\n");
    }
}
