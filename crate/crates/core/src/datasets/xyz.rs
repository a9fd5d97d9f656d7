//! Whitespace-separated `x y z [label]` text clouds.

use std::io::Write;
use std::path::Path;

use super::DatasetError;
use crate::geometry::{Point3, PointCloud};

pub fn parse_xyz(text: &str) -> Result<PointCloud, DatasetError> {
    let mut points = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    let mut labeled = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fail = |message: String| DatasetError::Parse {
            location: format!("line {}", i + 1),
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(fail(format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        let mut xyz = [0.0; 3];
        for (slot, f) in xyz.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| fail(format!("not a number: {f:?}")))?;
        }
        let has_label = fields.len() == 4;
        if *labeled.get_or_insert(has_label) != has_label {
            return Err(fail("label column present on some lines only".into()));
        }
        if has_label {
            let l: f64 = fields[3].parse().map_err(|_| fail(format!("not a number: {:?}", fields[3])))?;
            labels.push(l != 0.0);
        }
        points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    let labels = (labeled == Some(true)).then_some(labels);
    PointCloud::with_labels(points, labels).map_err(|e| DatasetError::Parse {
        location: "end of input".into(),
        message: e.to_string(),
    })
}

pub fn load_xyz(path: &Path) -> Result<PointCloud, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_xyz(&text).map_err(|e| e.in_file(path))
}

/// One point per line using the shortest representation that parses back
/// to the same `f64`.
pub fn write_xyz(mut w: impl Write, cloud: &PointCloud) -> std::io::Result<()> {
    for (i, p) in cloud.points().iter().enumerate() {
        write!(w, "{} {} {}", p.x, p.y, p.z)?;
        if let Some(l) = cloud.labels() {
            write!(w, " {}", l[i] as u8)?;
        }
        writeln!(w)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_line() {
        assert_eq!(parse_xyz("0 0 0").unwrap().points(), &[Point3::zeros()]);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let clean = parse_xyz("1 2 3 1\n4 5 6 0\n").unwrap();
        let noisy = parse_xyz("# header\n\n1 2 3 1 # first\n   \n4 5 6 0\n\n").unwrap();
        assert_eq!(clean, noisy);
        assert_eq!(clean.labels(), Some(&[true, false][..]));
    }

    #[test]
    fn round_trip_preserves_values() {
        let cloud = PointCloud::from_slice(&[[0.1, 1.0 / 3.0, -2.5e-300], [f64::MAX, f64::MIN_POSITIVE, 7.0]]).unwrap();
        let mut buf = Vec::new();
        write_xyz(&mut buf, &cloud).unwrap();
        assert_eq!(parse_xyz(std::str::from_utf8(&buf).unwrap()).unwrap(), cloud);
    }

    #[test]
    fn errors_name_the_line() {
        match parse_xyz("0 0 0\n1 x 2\n") {
            Err(DatasetError::Parse { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("{other:?}"),
        }
        assert!(parse_xyz("1 2\n").is_err());
        assert!(parse_xyz("1 2 3 1\n1 2 3\n").is_err());
        assert!(parse_xyz("# nothing\n").is_err());
    }
}
