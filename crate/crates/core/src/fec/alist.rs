//! The alist sparse-matrix text format (MacKay's convention).
//!
//! Layout, all tokens whitespace-separated:
//! ```text
//! n m
//! max_col_degree max_row_degree
//! n column degrees
//! m row degrees
//! n lines: 1-based check indices per column, zero-padded to max_col_degree
//! m lines: 1-based column indices per row, zero-padded to max_row_degree
//! ```
//! Indices are 1-based; zeros are only valid as padding beyond a line's
//! stated degree. Both padded and unpadded adjacency lines are accepted.

use super::{FecError, ParityCheckMatrix};

struct Tokens {
    toks: Vec<(i64, usize)>,
    pos: usize,
    last_line: usize,
}

impl Tokens {
    fn new(text: &str) -> Result<Self, FecError> {
        let mut toks = Vec::new();
        let mut last_line = 0;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            last_line = line_no;
            for t in line.split_whitespace() {
                let v = t.parse::<i64>().map_err(|_| FecError::Alist {
                    line: line_no,
                    msg: format!("not an integer: `{t}`"),
                })?;
                toks.push((v, line_no));
            }
        }
        Ok(Tokens { toks, pos: 0, last_line })
    }

    fn line(&self) -> usize {
        if self.pos == 0 {
            1
        } else {
            self.toks[self.pos - 1].1
        }
    }

    fn next(&mut self, what: &str) -> Result<i64, FecError> {
        let Some(&(v, _)) = self.toks.get(self.pos) else {
            return Err(FecError::Alist {
                line: self.last_line,
                msg: format!("unexpected end of file while reading {what}"),
            });
        };
        self.pos += 1;
        Ok(v)
    }

    fn next_count(&mut self, what: &str) -> Result<usize, FecError> {
        let v = self.next(what)?;
        if v < 0 {
            return Err(FecError::Alist {
                line: self.line(),
                msg: format!("{what} must be non-negative, got {v}"),
            });
        }
        Ok(v as usize)
    }

    fn skip_zeros(&mut self) {
        while matches!(self.toks.get(self.pos), Some(&(0, _))) {
            self.pos += 1;
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

/// Parse alist text into a parity-check matrix.
pub fn load_alist(text: &str) -> Result<ParityCheckMatrix, FecError> {
    let mut tk = Tokens::new(text)?;
    if tk.at_end() {
        return Err(FecError::Alist { line: 0, msg: "empty input".into() });
    }
    let n = tk.next_count("n")?;
    let m = tk.next_count("m")?;
    if n == 0 || m == 0 {
        return Err(FecError::Alist { line: tk.line(), msg: format!("degenerate size {n}x{m}") });
    }
    let max_col = tk.next_count("max column degree")?;
    let max_row = tk.next_count("max row degree")?;

    let mut col_deg = Vec::with_capacity(n);
    for c in 0..n {
        let d = tk.next_count("column degree")?;
        if d > max_col {
            return Err(FecError::Alist {
                line: tk.line(),
                msg: format!("column {} degree {d} exceeds stated max {max_col}", c + 1),
            });
        }
        col_deg.push(d);
    }
    let mut row_deg = Vec::with_capacity(m);
    for r in 0..m {
        let d = tk.next_count("row degree")?;
        if d > max_row {
            return Err(FecError::Alist {
                line: tk.line(),
                msg: format!("row {} degree {d} exceeds stated max {max_row}", r + 1),
            });
        }
        row_deg.push(d);
    }

    // Column adjacency section. Real indices are 1-based; zeros between
    // entries of a column are padding errors, zeros after them are padding.
    let mut cols: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (c, &deg) in col_deg.iter().enumerate() {
        let mut list = Vec::with_capacity(deg);
        for _ in 0..deg {
            let v = tk.next("column adjacency entry")?;
            if v <= 0 || v as usize > m {
                return Err(FecError::Alist {
                    line: tk.line(),
                    msg: format!("column {} entry {} out of range 1..={m}", c + 1, v),
                });
            }
            list.push(v as usize - 1);
        }
        tk.skip_zeros();
        cols.push(list);
    }

    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(m);
    for (r, &deg) in row_deg.iter().enumerate() {
        let mut list = Vec::with_capacity(deg);
        for _ in 0..deg {
            let v = tk.next("row adjacency entry")?;
            if v <= 0 || v as usize > n {
                return Err(FecError::Alist {
                    line: tk.line(),
                    msg: format!("row {} entry {} out of range 1..={n}", r + 1, v),
                });
            }
            list.push(v as usize - 1);
        }
        tk.skip_zeros();
        rows.push(list);
    }

    let h = ParityCheckMatrix::from_rows(n, rows)
        .map_err(|e| FecError::Alist { line: tk.line(), msg: e.to_string() })?;

    // Cross-check the two adjacency sections against each other.
    for (c, list) in cols.iter().enumerate() {
        let mut want = list.clone();
        want.sort_unstable();
        want.dedup();
        if h.col(c) != want.as_slice() {
            return Err(FecError::Alist {
                line: tk.line(),
                msg: format!("column {} adjacency disagrees with row section", c + 1),
            });
        }
    }
    Ok(h)
}

/// Serialize a parity-check matrix in alist form (zero-padded).
pub fn emit_alist(h: &ParityCheckMatrix) -> String {
    let max_col = (0..h.n).map(|c| h.col(c).len()).max().unwrap_or(0);
    let max_row = (0..h.m).map(|r| h.row(r).len()).max().unwrap_or(0);
    let mut out = String::new();
    out.push_str(&format!("{} {}\n{} {}\n", h.n, h.m, max_col, max_row));
    let col_degs: Vec<String> = (0..h.n).map(|c| h.col(c).len().to_string()).collect();
    out.push_str(&col_degs.join(" "));
    out.push('\n');
    let row_degs: Vec<String> = (0..h.m).map(|r| h.row(r).len().to_string()).collect();
    out.push_str(&row_degs.join(" "));
    out.push('\n');
    for c in 0..h.n {
        let mut parts: Vec<String> = h.col(c).iter().map(|&r| (r + 1).to_string()).collect();
        parts.resize(max_col, "0".into());
        out.push_str(&parts.join(" "));
        out.push('\n');
    }
    for r in 0..h.m {
        let mut parts: Vec<String> = h.row(r).iter().map(|&c| (c + 1).to_string()).collect();
        parts.resize(max_row, "0".into());
        out.push_str(&parts.join(" "));
        out.push('\n');
    }
    out
}
