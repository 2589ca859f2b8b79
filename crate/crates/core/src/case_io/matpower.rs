//! Reader and writer for the subset of the MATPOWER case format (version 2)
//! used by the standard IEEE test systems.
//!
//! Accepted statements are `function mpc = name`, `mpc.<field> = <value>;`
//! where the value is a number, a quoted string, a numeric matrix `[...]`
//! or a cell array `{...}`. Only `baseMVA`, `bus`, `gen` and `branch` are
//! interpreted; any other field (`gencost`, `bus_name`, ...) is skipped.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::debug;

use super::model::{Branch, BranchStatus, Bus, BusKind, Generator, PowerSystemCase};
use super::CaseError;

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Eq,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Semi,
    Comma,
    Newline,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, CaseError> {
    let mut out = Vec::new();
    for (lno, raw) in text.lines().enumerate() {
        let line = lno + 1;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let push = |out: &mut Vec<Spanned>, tok| out.push(Spanned { tok, line, col });
            match c {
                '%' => break,
                ' ' | '\t' | '\r' => i += 1,
                '=' => {
                    push(&mut out, Tok::Eq);
                    i += 1
                }
                '[' => {
                    push(&mut out, Tok::LBracket);
                    i += 1
                }
                ']' => {
                    push(&mut out, Tok::RBracket);
                    i += 1
                }
                '{' => {
                    push(&mut out, Tok::LBrace);
                    i += 1
                }
                '}' => {
                    push(&mut out, Tok::RBrace);
                    i += 1
                }
                ';' => {
                    push(&mut out, Tok::Semi);
                    i += 1
                }
                ',' => {
                    push(&mut out, Tok::Comma);
                    i += 1
                }
                '\'' => {
                    let start = i + 1;
                    let mut j = start;
                    while j < chars.len() && chars[j] != '\'' {
                        j += 1;
                    }
                    if j == chars.len() {
                        return Err(CaseError::Syntax {
                            line,
                            col,
                            msg: "unterminated string".into(),
                        });
                    }
                    push(&mut out, Tok::Str(chars[start..j].iter().collect()));
                    i = j + 1;
                }
                c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                    let start = i;
                    let mut j = i + 1;
                    while j < chars.len() {
                        let d = chars[j];
                        let exp_sign = (d == '-' || d == '+') && matches!(chars[j - 1], 'e' | 'E');
                        if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                            j += 1;
                        } else {
                            break;
                        }
                    }
                    let s: String = chars[start..j].iter().collect();
                    // signed special values: -Inf, +Inf
                    if (s == "-" || s == "+") && chars[j..].starts_with(&['I', 'n', 'f']) {
                        let v = if s == "-" { f64::NEG_INFINITY } else { f64::INFINITY };
                        push(&mut out, Tok::Number(v));
                        i = j + 3;
                        continue;
                    }
                    let v: f64 = s.parse().map_err(|_| CaseError::Syntax {
                        line,
                        col,
                        msg: format!("invalid number `{s}`"),
                    })?;
                    push(&mut out, Tok::Number(v));
                    i = j;
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    let mut j = i + 1;
                    while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_' || chars[j] == '.') {
                        j += 1;
                    }
                    let s: String = chars[start..j].iter().collect();
                    let tok = match s.as_str() {
                        "Inf" | "inf" => Tok::Number(f64::INFINITY),
                        "NaN" | "nan" => Tok::Number(f64::NAN),
                        _ => Tok::Ident(s),
                    };
                    push(&mut out, tok);
                    i = j;
                }
                other => {
                    return Err(CaseError::Syntax {
                        line,
                        col,
                        msg: format!("unexpected character `{other}`"),
                    })
                }
            }
        }
        out.push(Spanned {
            tok: Tok::Newline,
            line,
            col: chars.len() + 1,
        });
    }
    Ok(out)
}

#[derive(Debug)]
enum Value {
    Number(f64),
    Str(String),
    Matrix(Vec<Vec<f64>>),
    Cell,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err_at(&self, t: Option<&Spanned>, msg: impl Into<String>) -> CaseError {
        let (line, col) = match t {
            Some(s) => (s.line, s.col),
            None => self.toks.last().map(|s| (s.line, s.col)).unwrap_or((1, 1)),
        };
        CaseError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek().map(|s| &s.tok), Some(Tok::Newline | Tok::Semi)) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, want: Tok) -> Result<(), CaseError> {
        match self.next() {
            Some(s) if s.tok == want => Ok(()),
            other => Err(self.err_at(other.as_ref(), format!("expected {want:?}"))),
        }
    }

    fn value(&mut self) -> Result<Value, CaseError> {
        let t = self.next();
        match t.as_ref().map(|s| &s.tok) {
            Some(Tok::Number(v)) => Ok(Value::Number(*v)),
            Some(Tok::Str(s)) => Ok(Value::Str(s.clone())),
            Some(Tok::LBracket) => self.matrix(),
            Some(Tok::LBrace) => {
                let mut depth = 1;
                while depth > 0 {
                    match self.next().map(|s| s.tok) {
                        Some(Tok::LBrace) => depth += 1,
                        Some(Tok::RBrace) => depth -= 1,
                        Some(_) => {}
                        None => return Err(self.err_at(None, "unterminated cell array")),
                    }
                }
                Ok(Value::Cell)
            }
            _ => Err(self.err_at(t.as_ref(), "expected a number, string, matrix or cell array")),
        }
    }

    fn matrix(&mut self) -> Result<Value, CaseError> {
        let mut rows = Vec::new();
        let mut row = Vec::new();
        loop {
            let t = self.next();
            match t.as_ref().map(|s| &s.tok) {
                Some(Tok::Number(v)) => row.push(*v),
                Some(Tok::Comma) => {}
                Some(Tok::Semi) | Some(Tok::Newline) => {
                    if !row.is_empty() {
                        rows.push(std::mem::take(&mut row));
                    }
                }
                Some(Tok::RBracket) => {
                    if !row.is_empty() {
                        rows.push(row);
                    }
                    break;
                }
                None => return Err(self.err_at(None, "unterminated matrix")),
                _ => return Err(self.err_at(t.as_ref(), "unexpected token inside matrix")),
            }
        }
        if let Some(w) = rows.first().map(Vec::len) {
            if let Some(bad) = rows.iter().position(|r| r.len() != w) {
                return Err(self.err_at(
                    None,
                    format!("matrix row {} has {} columns, expected {}", bad + 1, rows[bad].len(), w),
                ));
            }
        }
        Ok(Value::Matrix(rows))
    }

    fn fields(&mut self) -> Result<(Option<String>, HashMap<String, Value>), CaseError> {
        let mut name = None;
        let mut fields = HashMap::new();
        loop {
            self.skip_separators();
            let Some(t) = self.next() else { break };
            match t.tok {
                Tok::Ident(ref kw) if kw == "function" => {
                    // function mpc = casename
                    match self.next().map(|s| s.tok) {
                        Some(Tok::Ident(_)) => {}
                        _ => return Err(self.err_at(Some(&t), "malformed function header")),
                    }
                    self.expect(Tok::Eq)?;
                    match self.next() {
                        Some(Spanned {
                            tok: Tok::Ident(n), ..
                        }) => name = Some(n),
                        other => return Err(self.err_at(other.as_ref(), "expected case name")),
                    }
                }
                Tok::Ident(ref lhs) => {
                    let Some((_, field)) = lhs.split_once('.') else {
                        return Err(self.err_at(Some(&t), format!("expected `mpc.<field>`, found `{lhs}`")));
                    };
                    self.expect(Tok::Eq)?;
                    let v = self.value()?;
                    fields.insert(field.to_string(), v);
                }
                _ => return Err(self.err_at(Some(&t), "expected a statement")),
            }
        }
        Ok((name, fields))
    }
}

fn take_matrix(fields: &mut HashMap<String, Value>, key: &str, min_cols: usize) -> Result<Vec<Vec<f64>>, CaseError> {
    match fields.remove(key) {
        Some(Value::Matrix(rows)) => {
            if let Some(r) = rows.first() {
                if r.len() < min_cols {
                    return Err(CaseError::Semantic(format!(
                        "mpc.{key} has {} columns, at least {min_cols} required",
                        r.len()
                    )));
                }
            }
            Ok(rows)
        }
        Some(_) => Err(CaseError::Semantic(format!("mpc.{key} must be a numeric matrix"))),
        None => Err(CaseError::Semantic(format!("missing required field mpc.{key}"))),
    }
}

/// Parses MATPOWER case text into a validated [`PowerSystemCase`].
pub fn parse_case(text: &str) -> Result<PowerSystemCase, CaseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let (name, mut fields) = p.fields()?;

    if let Some(Value::Str(v)) = fields.get("version") {
        if v != "2" {
            return Err(CaseError::Semantic(format!("unsupported case format version {v}")));
        }
    }
    let base_mva = match fields.remove("baseMVA") {
        Some(Value::Number(v)) => v,
        Some(_) => return Err(CaseError::Semantic("mpc.baseMVA must be a scalar".into())),
        None => return Err(CaseError::Semantic("missing required field mpc.baseMVA".into())),
    };
    let bus_rows = take_matrix(&mut fields, "bus", BUS_COLS)?;
    let gen_rows = take_matrix(&mut fields, "gen", GEN_COLS)?;
    let branch_rows = take_matrix(&mut fields, "branch", BRANCH_COLS)?;
    for key in fields.keys() {
        debug!("ignoring case field mpc.{key}");
    }

    let mut index = HashMap::new();
    for (i, r) in bus_rows.iter().enumerate() {
        let id = as_id(r[0], "bus", i)?;
        if index.insert(id, i).is_some() {
            return Err(CaseError::Semantic(format!("duplicate bus id {id}")));
        }
    }
    let lookup = |id: f64, what: &str, row: usize| -> Result<usize, CaseError> {
        let id = as_id(id, what, row)?;
        index
            .get(&id)
            .copied()
            .ok_or_else(|| CaseError::Semantic(format!("{what} row {} references unknown bus {id}", row + 1)))
    };

    let mut generators = Vec::new();
    for (g, r) in gen_rows.iter().enumerate() {
        let bus = lookup(r[0], "gen", g)?;
        if r[7] > 0.0 {
            generators.push(Generator {
                bus,
                p_mw: r[1],
                q_mvar: r[2],
                voltage_setpoint: r[5],
            });
        }
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (i, r) in bus_rows.iter().enumerate() {
        let mut kind = match r[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            4 => {
                return Err(CaseError::Semantic(format!(
                    "bus {} is isolated (type 4), which is not supported",
                    r[0]
                )))
            }
            t => return Err(CaseError::Semantic(format!("bus {} has unknown type {t}", r[0]))),
        };
        let gen = generators.iter().find(|g| g.bus == i);
        // a PV bus without an in-service unit cannot regulate voltage
        if kind == BusKind::Pv && gen.is_none() {
            kind = BusKind::Pq;
        }
        let voltage_setpoint = match (kind, gen) {
            (BusKind::Slack | BusKind::Pv, Some(g)) => g.voltage_setpoint,
            _ => r[7],
        };
        buses.push(Bus {
            id: r[0] as u32,
            kind,
            demand_mw: r[2],
            demand_mvar: r[3],
            shunt_mw: r[4],
            shunt_mvar: r[5],
            voltage_setpoint,
            base_kv: r[9],
        });
    }

    let mut branches = Vec::new();
    for (k, r) in branch_rows.iter().enumerate() {
        if r[10] <= 0.0 {
            debug!("dropping out-of-service branch row {}", k + 1);
            continue;
        }
        branches.push(Branch {
            from_bus: lookup(r[0], "branch", k)?,
            to_bus: lookup(r[1], "branch", k)?,
            resistance: r[2],
            reactance: r[3],
            charging_susceptance: r[4],
            tap_ratio: r[8],
            phase_shift_deg: r[9],
            status: BranchStatus::InService,
        });
    }

    let reference_bus = buses.iter().position(|b| b.kind == BusKind::Slack).unwrap_or(0);
    let case = PowerSystemCase {
        name: name.unwrap_or_else(|| "case".into()),
        base_mva,
        buses,
        branches,
        generators,
        reference_bus,
    };
    case.validate()?;
    Ok(case)
}

fn as_id(v: f64, what: &str, row: usize) -> Result<u32, CaseError> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(CaseError::Semantic(format!(
            "{what} row {} has invalid bus number {v}",
            row + 1
        )));
    }
    Ok(v as u32)
}

/// Writes the case back in MATPOWER syntax.
///
/// Only the columns that [`parse_case`] reads are meaningful; the remaining
/// required columns are filled with neutral values. Out-of-service branches
/// are written with status 0 and therefore disappear on re-parse.
pub fn write_case(case: &PowerSystemCase) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "function mpc = {}", case.name);
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {:?};", case.base_mva);
    let _ = writeln!(s, "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(s, "mpc.bus = [");
    for (i, b) in case.buses.iter().enumerate() {
        // a PV/slack setpoint lives on the generator row; the bus column keeps
        // the same value so that PQ buses round-trip too
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t1\t{:?}\t0\t{:?}\t1\t1.1\t0.9;",
            b.id,
            b.kind.matpower_code(),
            b.demand_mw,
            b.demand_mvar,
            b.shunt_mw,
            b.shunt_mvar,
            b.voltage_setpoint,
            b.base_kv,
        );
        debug_assert_eq!(case.bus_id(i), b.id);
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    let _ = writeln!(s, "mpc.gen = [");
    for g in &case.generators {
        let _ = writeln!(
            s,
            "\t{}\t{:?}\t{:?}\t9999\t-9999\t{:?}\t{:?}\t1\t9999\t0;",
            case.bus_id(g.bus),
            g.p_mw,
            g.q_mvar,
            g.voltage_setpoint,
            case.base_mva
        );
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus");
    let _ = writeln!(s, "mpc.branch = [");
    for br in &case.branches {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t0\t0\t0\t{:?}\t{:?}\t{};",
            case.bus_id(br.from_bus),
            case.bus_id(br.to_bus),
            br.resistance,
            br.reactance,
            br.charging_susceptance,
            br.tap_ratio,
            br.phase_shift_deg,
            u8::from(br.in_service())
        );
    }
    let _ = writeln!(s, "];");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = twobus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 50 0 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 300 -300 1.0 100 1 250 10;
];
mpc.branch = [
  1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
";

    #[test]
    fn parses_minimal_case() {
        let c = parse_case(TWO_BUS).unwrap();
        assert_eq!(c.name, "twobus");
        assert_eq!(c.n_buses(), 2);
        assert_eq!(c.branches.len(), 1);
        assert_eq!(c.reference_bus, 0);
        assert_eq!(c.demand_p_pu(1), 0.5);
    }

    #[test]
    fn dangling_branch_endpoint_is_semantic_error() {
        let text = TWO_BUS.replace("1 2 0 0.1", "1 99 0 0.1");
        match parse_case(&text) {
            Err(CaseError::Semantic(msg)) => assert!(msg.contains("99"), "{msg}"),
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn slack_count_is_checked() {
        let none = TWO_BUS.replace("1 3 0 0", "1 1 0 0");
        assert!(matches!(parse_case(&none), Err(CaseError::Semantic(m)) if m.contains("slack")));
        let two = TWO_BUS.replace("2 1 50 0", "2 3 50 0");
        assert!(matches!(parse_case(&two), Err(CaseError::Semantic(m)) if m.contains("slack")));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let bad = TWO_BUS.replace("mpc.baseMVA = 100;", "mpc.baseMVA = 100 $;");
        match parse_case(&bad) {
            Err(CaseError::Syntax { line, col, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(col, 19);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn missing_table_is_rejected() {
        let text = TWO_BUS.replace("mpc.gen", "mpc.gen_extra");
        assert!(matches!(parse_case(&text), Err(CaseError::Semantic(m)) if m.contains("mpc.gen")));
    }

    #[test]
    fn out_of_service_branches_are_dropped() {
        let text = TWO_BUS.replace(
            "  1 2 0 0.1 0 0 0 0 0 0 1 -360 360;",
            "  1 2 0 0.1 0 0 0 0 0 0 1 -360 360;\n  1 2 0 0.2 0 0 0 0 0 0 0 -360 360;",
        );
        assert_eq!(parse_case(&text).unwrap().branches.len(), 1);
    }

    #[test]
    fn cell_arrays_and_gencost_are_ignored() {
        let text = format!(
            "{TWO_BUS}mpc.gencost = [\n 2 0 0 3 0.1 1 0;\n];\nmpc.bus_name = {{\n 'A';\n 'B';\n}};\n"
        );
        assert_eq!(parse_case(&text).unwrap().n_buses(), 2);
    }

    #[test]
    fn infinite_limits_lex() {
        let text = TWO_BUS.replace("300 -300", "Inf -Inf");
        assert!(parse_case(&text).is_ok());
    }
}
