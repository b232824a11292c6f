use std::io::{BufRead, Write};

use nalgebra::Matrix3;

use super::{ImuSample, MeasurementSource, PositionMeasurement};
use crate::error::{Error, Result};
use crate::Vec3;

fn fields(line: &str, n: usize, what: &str, lineno: usize) -> Result<Vec<String>> {
    let f: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
    if f.len() != n {
        return Err(Error::Parse(format!("{what} line {lineno}: expected {n} fields, found {}", f.len())));
    }
    Ok(f)
}

fn num(s: &str, what: &str, lineno: usize) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("{what} line {lineno}: bad number {s:?}")))
}

fn data_lines<R: BufRead>(input: R) -> impl Iterator<Item = Result<(usize, String)>> {
    input.lines().enumerate().filter_map(|(i, l)| match l {
        Err(e) => Some(Err(e.into())),
        Ok(l) => {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('#') && !t.starts_with('t')).then(|| Ok((i + 1, t.to_string())))
        }
    })
}

/// CSV `t,fx,fy,fz,wx,wy,wz`.
pub fn write_imu_csv<W: Write>(imu: &[ImuSample], out: &mut W) -> Result<()> {
    writeln!(out, "t,fx,fy,fz,wx,wy,wz")?;
    for s in imu {
        writeln!(out, "{},{},{},{},{},{},{}", s.t, s.f.x, s.f.y, s.f.z, s.w.x, s.w.y, s.w.z)?;
    }
    Ok(())
}

pub fn read_imu_csv<R: BufRead>(input: R) -> Result<Vec<ImuSample>> {
    let mut out = Vec::new();
    for item in data_lines(input) {
        let (n, line) = item?;
        let f = fields(&line, 7, "IMU", n)?;
        let v = f.iter().map(|s| num(s, "IMU", n)).collect::<Result<Vec<_>>>()?;
        out.push(ImuSample { t: v[0], f: Vec3::new(v[1], v[2], v[3]), w: Vec3::new(v[4], v[5], v[6]) });
    }
    Ok(out)
}

/// CSV `t,x,y,z,r11,r22,r33,source`; the covariance is diagonal.
pub fn write_measurement_csv<W: Write>(meas: &[PositionMeasurement], out: &mut W) -> Result<()> {
    writeln!(out, "t,x,y,z,r11,r22,r33,source")?;
    for m in meas {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.t, m.y.x, m.y.y, m.y.z, m.r[(0, 0)], m.r[(1, 1)], m.r[(2, 2)], m.source.as_str()
        )?;
    }
    Ok(())
}

pub fn read_measurement_csv<R: BufRead>(input: R) -> Result<Vec<PositionMeasurement>> {
    let mut out = Vec::new();
    for item in data_lines(input) {
        let (n, line) = item?;
        let f = fields(&line, 8, "measurement", n)?;
        let v = f[..7].iter().map(|s| num(s, "measurement", n)).collect::<Result<Vec<_>>>()?;
        let source = match f[7].as_str() {
            "CPP" | "cpp" => MeasurementSource::Cpp,
            "VO" | "vo" => MeasurementSource::Vo,
            other => return Err(Error::Parse(format!("measurement line {n}: unknown source {other:?}"))),
        };
        if v[4] < 0.0 || v[5] < 0.0 || v[6] < 0.0 {
            return Err(Error::Parse(format!("measurement line {n}: negative variance")));
        }
        out.push(PositionMeasurement {
            t: v[0],
            y: Vec3::new(v[1], v[2], v[3]),
            r: Matrix3::from_diagonal(&Vec3::new(v[4], v[5], v[6])),
            source,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let imu = vec![ImuSample { t: 0.01, f: Vec3::new(0.1, 0.2, 9.8), w: Vec3::new(0.0, 0.01, -0.02) }];
        let mut buf = Vec::new();
        write_imu_csv(&imu, &mut buf).unwrap();
        assert_eq!(read_imu_csv(buf.as_slice()).unwrap(), imu);

        let meas = vec![PositionMeasurement {
            t: 1.0,
            y: Vec3::new(1.0, 2.0, 3.0),
            r: Matrix3::from_diagonal(&Vec3::new(0.1, 0.2, 0.3)),
            source: MeasurementSource::Vo,
        }];
        let mut buf = Vec::new();
        write_measurement_csv(&meas, &mut buf).unwrap();
        assert_eq!(read_measurement_csv(buf.as_slice()).unwrap(), meas);
        assert!(read_measurement_csv("1,2,3,4,0.1,0.1,0.1,GPS\n".as_bytes()).is_err());
    }
}
