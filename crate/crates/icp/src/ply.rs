//! ASCII PLY: `x y z`, followed by the covariance upper triangle
//! `c00 c01 c02 c11 c12 c22` when the cloud has covariances.

use std::io::{BufRead, Write};

use crate::error::IcpError;
use crate::PointCloud;

const COV_NAMES: [&str; 6] = ["c00", "c01", "c02", "c11", "c12", "c22"];

pub fn write_ply<W: Write>(cloud: &PointCloud, mut w: W) -> Result<(), IcpError> {
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
    for n in ["x", "y", "z"] {
        writeln!(w, "property double {n}")?;
    }
    if cloud.covariances.is_some() {
        for n in COV_NAMES {
            writeln!(w, "property double {n}")?;
        }
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        write!(w, "{} {} {}", p[0], p[1], p[2])?;
        if let Some(cs) = &cloud.covariances {
            let c = cs[i];
            write!(w, " {} {} {} {} {} {}", c[0][0], c[0][1], c[0][2], c[1][1], c[1][2], c[2][2])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_ply<R: BufRead>(r: R) -> Result<PointCloud, IcpError> {
    let err = |m: String| IcpError::Ply(m);
    let mut lines = r.lines();
    let mut next = || -> Result<String, IcpError> {
        lines
            .next()
            .ok_or_else(|| IcpError::Ply("unexpected end of file".into()))?
            .map_err(IcpError::from)
    };
    if next()?.trim() != "ply" {
        return Err(err("missing 'ply' magic".into()));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = next()?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", "1.0"] => {}
            ["format", f, ..] => return Err(err(format!("unsupported format '{f}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| err(format!("bad vertex count '{n}'")))?);
                in_vertex = true;
            }
            ["element", name, ..] => return Err(err(format!("unsupported element '{name}'"))),
            ["property", "float" | "double" | "float32" | "float64", name] if in_vertex => props.push(name.to_string()),
            _ => return Err(err(format!("unsupported header line '{line}'"))),
        }
    }
    let n = count.ok_or_else(|| err("no vertex element".into()))?;
    let pos = |name: &str| props.iter().position(|p| p == name);
    let xyz = [pos("x"), pos("y"), pos("z")];
    let xyz = match xyz {
        [Some(a), Some(b), Some(c)] => [a, b, c],
        _ => return Err(err("vertex needs x, y and z".into())),
    };
    let cov: Vec<Option<usize>> = COV_NAMES.iter().map(|n| pos(n)).collect();
    let has_cov = match cov.iter().filter(|c| c.is_some()).count() {
        0 => false,
        6 => true,
        _ => return Err(err("partial covariance properties".into())),
    };
    if props.len() != 3 + if has_cov { 6 } else { 0 } {
        return Err(err(format!("unexpected vertex properties {props:?}")));
    }
    let mut points = Vec::with_capacity(n);
    let mut covs = Vec::new();
    for i in 0..n {
        let line = next()?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("vertex {i}: bad number '{t}'"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != props.len() {
            return Err(err(format!("vertex {i}: expected {} values, got {}", props.len(), vals.len())));
        }
        points.push(xyz.map(|k| vals[k]));
        if has_cov {
            let c: Vec<f64> = cov.iter().map(|k| vals[k.unwrap_or(0)]).collect();
            covs.push([[c[0], c[1], c[2]], [c[1], c[3], c[4]], [c[2], c[4], c[5]]]);
        }
    }
    if has_cov {
        PointCloud::with_covariances(points, covs)
    } else {
        Ok(PointCloud::new(points))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = PointCloud::with_covariances(
            vec![[0.1, -0.2, 1.0 / 3.0], [1e-7, 2.0, 0.0]],
            vec![[[1.0, 0.1, 0.0], [0.1, 1.0, 0.0], [0.0, 0.0, 1e-3]]; 2],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_ply(&c, &mut buf).unwrap();
        assert_eq!(read_ply(buf.as_slice()).unwrap(), c);

        let plain = PointCloud::new(vec![[1.0, 2.0, 3.0]]);
        let mut buf = Vec::new();
        write_ply(&plain, &mut buf).unwrap();
        assert_eq!(read_ply(buf.as_slice()).unwrap(), plain);
    }

    #[test]
    fn rejects_binary_and_truncation() {
        assert!(read_ply("ply\nformat binary_little_endian 1.0\nend_header\n".as_bytes()).is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(read_ply(short.as_bytes()).is_err());
    }
}
