//! Per-step trace records and their CSV form.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::signal_model::CHANNELS;

/// Overflow bit: the correction accumulator or output word saturated.
pub const OVF_CORRECTION: u8 = 1;
/// Overflow bit: the PID accumulator or output word saturated.
pub const OVF_PID: u8 = 2;

/// Snapshot of one sample period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub t: f64,
    /// Plant eddy currents, amps.
    pub currents: [f64; CHANNELS],
    /// Rogowski coil output, volts.
    pub coil_volts: [f64; CHANNELS],
    pub adc_codes: [i16; CHANNELS],
    /// Corrected vector, volts.
    pub corrected: [f64; CHANNELS],
    /// Controller outputs, volts.
    pub pid_out: [f64; CHANNELS],
    pub dac_codes: [u16; CHANNELS],
    /// Power amplifier output applied to the plant, volts.
    pub applied: [f64; CHANNELS],
    pub frames_lost: u64,
    /// Bitwise OR of `OVF_CORRECTION` and `OVF_PID` for this step.
    pub ovf: u8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

pub fn csv_header() -> Vec<String> {
    let mut h = vec!["step".to_string(), "t".to_string()];
    for prefix in ["i", "v", "adc", "c", "u", "dac", "a"] {
        h.extend((0..CHANNELS).map(|k| format!("{prefix}{k}")));
    }
    h.push("frames_lost".into());
    h.push("ovf".into());
    h
}

// `{:?}` is the shortest representation that parses back to the same f64.
fn push_floats(row: &mut Vec<String>, xs: &[f64; CHANNELS]) {
    row.extend(xs.iter().map(|x| format!("{x:?}")));
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(csv_header())?;
        let mut row = Vec::with_capacity(4 + 7 * CHANNELS);
        for r in &self.records {
            row.clear();
            row.push(r.step.to_string());
            row.push(format!("{:?}", r.t));
            push_floats(&mut row, &r.currents);
            push_floats(&mut row, &r.coil_volts);
            row.extend(r.adc_codes.iter().map(|c| c.to_string()));
            push_floats(&mut row, &r.corrected);
            push_floats(&mut row, &r.pid_out);
            row.extend(r.dac_codes.iter().map(|c| c.to_string()));
            push_floats(&mut row, &r.applied);
            row.push(r.frames_lost.to_string());
            row.push(r.ovf.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().ne(csv_header().iter().map(String::as_str)) {
            return Err(Error::domain("trace CSV header does not match"));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let field = |k: usize| -> Result<&str> {
                row.get(k)
                    .ok_or_else(|| Error::domain(format!("trace row missing column {k}")))
            };
            let float = |k: usize| -> Result<f64> {
                field(k)?
                    .parse()
                    .map_err(|e| Error::domain(format!("trace column {k}: {e}")))
            };
            let floats = |base: usize| -> Result<[f64; CHANNELS]> {
                let mut out = [0.0; CHANNELS];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = float(base + i)?;
                }
                Ok(out)
            };
            let ints = |base: usize| -> Result<[i64; CHANNELS]> {
                let mut out = [0i64; CHANNELS];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = field(base + i)?
                        .parse()
                        .map_err(|e| Error::domain(format!("trace column {}: {e}", base + i)))?;
                }
                Ok(out)
            };
            let c = CHANNELS;
            let parse_int = |k: usize| -> Result<u64> {
                field(k)?
                    .parse()
                    .map_err(|e| Error::domain(format!("trace column {k}: {e}")))
            };
            records.push(TraceRecord {
                step: parse_int(0)?,
                t: float(1)?,
                currents: floats(2)?,
                coil_volts: floats(2 + c)?,
                adc_codes: ints(2 + 2 * c)?.map(|x| x as i16),
                corrected: floats(2 + 3 * c)?,
                pid_out: floats(2 + 4 * c)?,
                dac_codes: ints(2 + 5 * c)?.map(|x| x as u16),
                applied: floats(2 + 6 * c)?,
                frames_lost: parse_int(2 + 7 * c)?,
                ovf: parse_int(3 + 7 * c)? as u8,
            });
        }
        Ok(Self { records })
    }
}
