use std::io::{self, Write};

use super::{LinearModel, RowSense, VarKind};

/// LP-format identifiers allow a restricted character set; everything else
/// becomes `_`.
fn sanitize(name: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    if out.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        out.insert(0, '_');
    }
    out
}

fn write_terms<W: Write>(
    out: &mut W,
    terms: impl Iterator<Item = (String, f64)>,
) -> io::Result<()> {
    let mut empty = true;
    for (name, a) in terms {
        let sign = if a < 0.0 { '-' } else { '+' };
        write!(out, " {sign} {} {name}", a.abs())?;
        empty = false;
    }
    if empty {
        write!(out, " 0")?;
    }
    Ok(())
}

/// Write `model` in CPLEX LP format, readable by HiGHS and most solvers.
pub fn write_lp<W: Write>(model: &LinearModel, out: &mut W) -> io::Result<()> {
    let names: Vec<String> = model.vars().iter().map(|v| sanitize(&v.name)).collect();
    writeln!(out, "Minimize")?;
    write!(out, " obj:")?;
    write_terms(
        out,
        model
            .objective()
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, &c)| (names[j].clone(), c)),
    )?;
    let k = model.objective_constant();
    if k != 0.0 {
        write!(out, " {} {}", if k < 0.0 { '-' } else { '+' }, k.abs())?;
    }
    writeln!(out)?;
    writeln!(out, "Subject To")?;
    for row in model.rows() {
        write!(out, " {}:", sanitize(&row.name))?;
        write_terms(
            out,
            row.terms
                .iter()
                .map(|&(v, a)| (names[v.index()].clone(), a)),
        )?;
        let sense = match row.sense {
            RowSense::Le => "<=",
            RowSense::Eq => "=",
            RowSense::Ge => ">=",
        };
        writeln!(out, " {sense} {}", row.rhs)?;
    }
    writeln!(out, "Bounds")?;
    for (v, name) in model.vars().iter().zip(&names) {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (false, false) => writeln!(out, " {name} free")?,
            (true, true) => writeln!(out, " {} <= {name} <= {}", v.lower, v.upper)?,
            (true, false) => writeln!(out, " {name} >= {}", v.lower)?,
            (false, true) => writeln!(out, " -inf <= {name} <= {}", v.upper)?,
        }
    }
    let binaries: Vec<&String> = model
        .vars()
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n)
        .collect();
    if !binaries.is_empty() {
        writeln!(out, "Binaries")?;
        for name in binaries {
            writeln!(out, " {name}")?;
        }
    }
    writeln!(out, "End")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_sections_and_sanitized_names() {
        let mut m = LinearModel::new();
        let u = m.add_binary("u[g1,3]");
        let p = m.add_var(
            "P[g1,3]",
            f64::NEG_INFINITY,
            f64::INFINITY,
            VarKind::Continuous,
            2.5,
        );
        m.add_row("cap[g1,3]", [(p, 1.0), (u, -100.0)], RowSense::Le, 0.0);
        m.add_objective_constant(7.0);
        let mut buf = Vec::new();
        write_lp(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(" obj: + 2.5 P_g1_3_ + 7"));
        assert!(text.contains(" cap_g1_3_: + 1 P_g1_3_ - 100 u_g1_3_ <= 0"));
        assert!(text.contains(" P_g1_3_ free"));
        assert!(text.contains("Binaries\n u_g1_3_\nEnd"));
    }
}
