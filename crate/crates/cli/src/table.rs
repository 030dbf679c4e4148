use std::fmt::Write as _;

pub const VERSION_LINE: &str = concat!("# iwpairs ", env!("CARGO_PKG_VERSION"));

/// CSV with a version comment line and numbers at fixed significant digits.
pub struct Csv {
    precision: usize,
    body: String,
}

impl Csv {
    pub fn new(precision: usize, what: &str, columns: &[&str]) -> Csv {
        let mut body = format!("{VERSION_LINE} {what}\n");
        body.push_str(&columns.join(","));
        body.push('\n');
        Csv { precision: precision.clamp(1, 17), body }
    }

    pub fn num(&self, v: f64) -> String {
        if v.is_finite() {
            format!("{:.*e}", self.precision - 1, v)
        } else {
            format!("{v}")
        }
    }

    pub fn row(&mut self, cells: &[f64]) {
        let line: Vec<String> = cells.iter().map(|v| self.num(*v)).collect();
        let _ = writeln!(self.body, "{}", line.join(","));
    }

    pub fn raw_row(&mut self, cells: &[String]) {
        let _ = writeln!(self.body, "{}", cells.join(","));
    }

    pub fn finish(self) -> String {
        self.body
    }
}
