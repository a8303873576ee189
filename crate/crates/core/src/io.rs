//! Dump and load formats for disorder fields and point sets.
//!
//! Binary field layout, all little-endian:
//!
//! ```text
//! magic   b"HPFIELD\0"            8 bytes
//! version u32 = 1
//! n       u32
//! h       u32
//! tail    u32   0 = constant L, 1 = log-power L
//! alpha   f64
//! param   f64   c or b
//! seed    u64
//! count   u64   = n (2h + 1)
//! rows    count × { i u32, x i32, omega f64 }, i ascending then x ascending
//! ```
//!
//! CSV field layout: a two-line preamble `n,h,alpha,tail,tail_param,seed`
//! and its values, then `i,x,omega` and one row per site in the same order.
//! Floats are printed in shortest round-trip form, so the CSV form also
//! reproduces every weight exactly.
//!
//! Points CSV: header `t,x,w`, one point per row.

use std::io::{Read, Write};

use crate::elpp::WeightedPoint;
use crate::environment::{DisorderField, SlowlyVarying, TailParams};
use crate::error::{Error, Result};

pub const FIELD_MAGIC: &[u8; 8] = b"HPFIELD\0";
pub const FIELD_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 8 * 4;
const ROW_LEN: usize = 16;

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn tail_tag(t: &TailParams) -> (u32, &'static str, f64) {
    match t.slowly_varying() {
        SlowlyVarying::Constant { c } => (0, "constant", c),
        SlowlyVarying::LogPower { b } => (1, "log_power", b),
    }
}

fn tail_from(alpha: f64, tag: &str, param: f64) -> Result<TailParams> {
    let sv = match tag {
        "constant" => SlowlyVarying::Constant { c: param },
        "log_power" => SlowlyVarying::LogPower { b: param },
        other => return fmt_err(format!("unknown tail tag {other:?}")),
    };
    TailParams::new(alpha, sv).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_field_binary(field: &DisorderField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ROW_LEN * field.len());
    let (tag, _, param) = tail_tag(field.tail());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    out.extend_from_slice(&(field.n() as u32).to_le_bytes());
    out.extend_from_slice(&(field.h() as u32).to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&field.tail().alpha().to_le_bytes());
    out.extend_from_slice(&param.to_le_bytes());
    out.extend_from_slice(&field.seed().to_le_bytes());
    out.extend_from_slice(&(field.len() as u64).to_le_bytes());
    let h = field.h() as i64;
    let mut k = 0;
    for i in 1..=field.n() {
        for x in -h..=h {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.extend_from_slice(&(x as i32).to_le_bytes());
            out.extend_from_slice(&field.weights()[k].to_le_bytes());
            k += 1;
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos.checked_add(N).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let mut a = [0u8; N];
                a.copy_from_slice(&self.buf[self.pos..e]);
                self.pos = e;
                Ok(a)
            }
            None => fmt_err("truncated field data"),
        }
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn decode_field_binary(buf: &[u8]) -> Result<DisorderField> {
    let mut c = Cursor { buf, pos: 0 };
    let magic: [u8; 8] = c.take()?;
    if &magic != FIELD_MAGIC {
        return fmt_err("bad magic");
    }
    let version = c.u32()?;
    if version != FIELD_VERSION {
        return fmt_err(format!("unsupported field format version {version}"));
    }
    let n = c.u32()? as usize;
    let h = c.u32()? as usize;
    let tag = c.u32()?;
    let alpha = c.f64()?;
    let param = c.f64()?;
    let seed = c.u64()?;
    let count = c.u64()?;
    let tag = match tag {
        0 => "constant",
        1 => "log_power",
        t => return fmt_err(format!("unknown tail tag {t}")),
    };
    let tail = tail_from(alpha, tag, param)?;
    if n == 0 || h > i32::MAX as usize {
        return fmt_err("invalid field extent");
    }
    let expected = (2 * h as u64 + 1)
        .checked_mul(n as u64)
        .filter(|&e| e == count)
        .ok_or_else(|| Error::Format(format!("row count {count} does not match n={n}, h={h}")))?;
    let rest = (buf.len() - c.pos) as u64;
    if rest != expected.saturating_mul(ROW_LEN as u64) {
        return fmt_err(format!("expected {} bytes of rows, found {rest}", expected * ROW_LEN as u64));
    }
    let mut err = None;
    let field = DisorderField::from_fn(n, h, tail, seed, |i, x| {
        if err.is_some() {
            return 0.0;
        }
        let row = (|| -> Result<f64> {
            let ri = c.u32()? as usize;
            let rx = c.i32()? as i64;
            if ri != i || rx != x {
                return fmt_err(format!("row ({ri},{rx}) out of order, expected ({i},{x})"));
            }
            c.f64()
        })();
        match row {
            Ok(w) => w,
            Err(e) => {
                err = Some(e);
                0.0
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    field.map_err(|e| Error::Format(e.to_string()))
}

pub fn write_field_csv<W: Write>(field: &DisorderField, out: W) -> Result<()> {
    let (_, tag, param) = tail_tag(field.tail());
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["n", "h", "alpha", "tail", "tail_param", "seed"])?;
    w.write_record([
        field.n().to_string(),
        field.h().to_string(),
        field.tail().alpha().to_string(),
        tag.to_string(),
        param.to_string(),
        field.seed().to_string(),
    ])?;
    w.write_record(["i", "x", "omega"])?;
    let h = field.h() as i64;
    let mut k = 0;
    for i in 1..=field.n() {
        for x in -h..=h {
            w.write_record([i.to_string(), x.to_string(), field.weights()[k].to_string()])?;
            k += 1;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn encode_field_csv(field: &DisorderField) -> Vec<u8> {
    let mut v = Vec::new();
    write_field_csv(field, &mut v).expect("writing to a Vec cannot fail");
    v
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from {s:?}")))
}

pub fn read_field_csv<R: Read>(input: R) -> Result<DisorderField> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = r.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        match records.next() {
            Some(rec) => Ok(rec?),
            None => fmt_err(format!("missing {what}")),
        }
    };
    let head = next("preamble header")?;
    if head.iter().collect::<Vec<_>>() != ["n", "h", "alpha", "tail", "tail_param", "seed"] {
        return fmt_err("bad preamble header");
    }
    let meta = next("preamble values")?;
    if meta.len() != 6 {
        return fmt_err("preamble must have 6 fields");
    }
    let n: usize = parse(&meta[0], "n")?;
    let h: usize = parse(&meta[1], "h")?;
    let alpha: f64 = parse(&meta[2], "alpha")?;
    let param: f64 = parse(&meta[4], "tail_param")?;
    let seed: u64 = parse(&meta[5], "seed")?;
    let tail = tail_from(alpha, meta[3].trim(), param)?;
    let cols = next("row header")?;
    if cols.iter().collect::<Vec<_>>() != ["i", "x", "omega"] {
        return fmt_err("bad row header");
    }
    if n == 0 || h > i32::MAX as usize || n > u32::MAX as usize {
        return fmt_err("invalid field extent");
    }
    let expected = (2 * h as u64 + 1)
        .checked_mul(n as u64)
        .ok_or_else(|| Error::Format("field extent overflows".into()))?;
    // rows are read before allocating the field, so a forged preamble
    // cannot trigger a huge allocation
    let mut weights = Vec::new();
    let (mut i, mut x) = (1usize, -(h as i64));
    for rec in records {
        let rec = rec?;
        if weights.len() as u64 >= expected {
            return fmt_err("trailing rows after the field");
        }
        if rec.len() != 3 {
            return fmt_err("field row must have 3 fields");
        }
        let ri: usize = parse(&rec[0], "i")?;
        let rx: i64 = parse(&rec[1], "x")?;
        if ri != i || rx != x {
            return fmt_err(format!("row ({ri},{rx}) out of order, expected ({i},{x})"));
        }
        weights.push(parse::<f64>(&rec[2], "omega")?);
        if x == h as i64 {
            i += 1;
            x = -(h as i64);
        } else {
            x += 1;
        }
    }
    if weights.len() as u64 != expected {
        return fmt_err(format!("expected {expected} rows, found {}", weights.len()));
    }
    let mut k = 0;
    DisorderField::from_fn(n, h, tail, seed, |_, _| {
        k += 1;
        weights[k - 1]
    })
    .map_err(|e| Error::Format(e.to_string()))
}

pub fn decode_field_csv(buf: &[u8]) -> Result<DisorderField> {
    read_field_csv(buf)
}

pub fn read_points_csv<R: Read>(input: R) -> Result<Vec<WeightedPoint>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    {
        let headers = r.headers()?;
        if headers.iter().collect::<Vec<_>>() != ["t", "x", "w"] {
            return fmt_err("points header must be t,x,w");
        }
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let p: WeightedPoint = rec?;
        if !(p.t.is_finite() && p.t > 0.0 && p.x.is_finite() && p.w.is_finite() && p.w >= 0.0) {
            return fmt_err(format!("invalid point (t={}, x={}, w={})", p.t, p.x, p.w));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn decode_points_csv(buf: &[u8]) -> Result<Vec<WeightedPoint>> {
    read_points_csv(buf)
}

pub fn write_points_csv<W: Write>(points: &[WeightedPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "w"])?;
    for p in points {
        w.write_record([p.t.to_string(), p.x.to_string(), p.w.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::sample_field;

    #[test]
    fn binary_rejects_trailing_bytes() {
        let f = sample_field(2, 1, &TailParams::pareto(1.0).unwrap(), 3).unwrap();
        let mut b = encode_field_binary(&f);
        assert_eq!(decode_field_binary(&b).unwrap(), f);
        b.push(0);
        assert!(decode_field_binary(&b).is_err());
    }

    #[test]
    fn huge_count_does_not_allocate() {
        let f = sample_field(1, 0, &TailParams::pareto(1.0).unwrap(), 3).unwrap();
        let mut b = encode_field_binary(&f);
        b[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        b[16..20].copy_from_slice(&(i32::MAX as u32).to_le_bytes());
        assert!(decode_field_binary(&b).is_err());
    }

    #[test]
    fn points_roundtrip() {
        let pts = vec![WeightedPoint::new(0.5, -0.25, 3.0), WeightedPoint::new(1.0, 0.1, 0.1 + 0.2)];
        let mut buf = Vec::new();
        write_points_csv(&pts, &mut buf).unwrap();
        assert_eq!(read_points_csv(&buf[..]).unwrap(), pts);
    }
}
