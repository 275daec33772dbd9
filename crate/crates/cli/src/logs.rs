//! CSV log bundle: imu.csv, contacts.csv, camera.csv, truth.csv and
//! estimates.csv.
//!
//! Timestamps are written with 9 decimals, every other float in Rust's
//! shortest round-trip form, so a written file parses back bit-exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use legged_inekf::inekf::UpdateKind;
use legged_inekf::lie::{Rotation, Se23};
use legged_inekf::sim::EstimateRecord;
use legged_inekf::state::idx;
use legged_inekf::{CameraVelocitySample, ContactKinematicSample, ImuSample, RobotState};
use nalgebra::Vector3;

use crate::error::CliError;

pub const IMU_HEADER: [&str; 7] = ["t", "wx", "wy", "wz", "ax", "ay", "az"];
pub const CAMERA_HEADER: [&str; 7] = ["t", "vx", "vy", "vz", "wx", "wy", "wz"];
pub const TRUTH_HEADER: [&str; 11] = ["t", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz"];

/// Everything `replay` reads from a log directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogBundle {
    pub imu: Vec<ImuSample>,
    /// `omega_tilde` is not logged; [`LogBundle::read`] fills it from the
    /// latest IMU row at or before the contact row.
    pub contacts: Vec<ContactKinematicSample>,
    pub camera: Vec<CameraVelocitySample>,
    pub truth: Option<Vec<(f64, Se23)>>,
}

pub fn fmt_time(t: f64) -> String {
    format!("{t:.9}")
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(f)))
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, path: &Path, row: &[String]) -> Result<(), CliError> {
    w.write_record(row).map_err(|e| CliError::io(path, e))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn vec3(row: &mut Vec<String>, v: &Vector3<f64>) {
    row.extend(v.iter().map(|x| fmt_f64(*x)));
}

fn quat(row: &mut Vec<String>, r: &Rotation) {
    row.extend(r.to_quaternion().iter().map(|x| fmt_f64(*x)));
}

pub fn write_imu(path: &Path, imu: &[ImuSample]) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_row(&mut w, path, &IMU_HEADER.map(String::from))?;
    for s in imu {
        let mut row = vec![fmt_time(s.t)];
        vec3(&mut row, &s.omega);
        vec3(&mut row, &s.accel);
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

pub fn contacts_header(joints: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "contact_id", "active"].map(String::from).to_vec();
    h.extend((0..joints).map(|i| format!("alpha{i}")));
    h.extend((0..joints).map(|i| format!("alpha_dot{i}")));
    h
}

pub fn write_contacts(path: &Path, contacts: &[ContactKinematicSample]) -> Result<(), CliError> {
    let joints = contacts.first().map_or(3, |c| c.alpha.len());
    let mut w = create(path)?;
    write_row(&mut w, path, &contacts_header(joints))?;
    for c in contacts {
        if c.alpha.len() != joints || c.alpha_dot.len() != joints {
            return Err(CliError::Config(format!("contact rows must all have {joints} joints")));
        }
        let mut row = vec![fmt_time(c.t), c.contact_id.to_string(), u8::from(c.active).to_string()];
        row.extend(c.alpha.iter().chain(&c.alpha_dot).map(|x| fmt_f64(*x)));
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

pub fn write_camera(path: &Path, camera: &[CameraVelocitySample]) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_row(&mut w, path, &CAMERA_HEADER.map(String::from))?;
    for s in camera {
        let mut row = vec![fmt_time(s.t)];
        vec3(&mut row, &s.velocity);
        vec3(&mut row, &s.omega);
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

pub fn write_truth(path: &Path, truth: &[(f64, Se23)]) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_row(&mut w, path, &TRUTH_HEADER.map(String::from))?;
    for (t, x) in truth {
        let mut row = vec![fmt_time(*t)];
        quat(&mut row, &x.rotation);
        vec3(&mut row, &x.velocity);
        vec3(&mut row, &x.position);
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

pub fn estimates_header() -> Vec<String> {
    let mut h: Vec<String> = ["t", "kind", "contact_id", "accepted", "chi2"].map(String::from).to_vec();
    h.extend(
        [
            "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz", "bgx", "bgy", "bgz", "bax", "bay", "baz", "cqw",
            "cqx", "cqy", "cqz", "cpx", "cpy", "cpz",
        ]
        .map(String::from),
    );
    h.extend((0..idx::DIM).map(|i| format!("p{i}")));
    h
}

pub fn write_estimates(path: &Path, records: &[EstimateRecord]) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_row(&mut w, path, &estimates_header())?;
    for r in records {
        let (kind, id) = match r.kind {
            UpdateKind::Kinematic { contact_id } => ("kinematic", contact_id.to_string()),
            UpdateKind::Camera => ("camera", String::new()),
        };
        let s = &r.state;
        let mut row = vec![
            fmt_time(r.t),
            kind.to_string(),
            id,
            u8::from(r.accepted).to_string(),
            fmt_f64(r.chi2),
        ];
        quat(&mut row, &s.pose.rotation);
        vec3(&mut row, &s.pose.velocity);
        vec3(&mut row, &s.pose.position);
        vec3(&mut row, &s.gyro_bias);
        vec3(&mut row, &s.accel_bias);
        quat(&mut row, &s.cam_rotation);
        vec3(&mut row, &s.cam_position);
        row.extend(r.p_diag.iter().map(|x| fmt_f64(*x)));
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

/// Row-by-row reader with line-numbered diagnostics.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn open(path: &Path) -> Result<Option<Table>, CliError> {
        if !path.exists() {
            return Ok(None);
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)
            .map_err(|e| CliError::io(path, e))?;
        let mut header = None;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                CliError::schema(path, line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if header.is_none() {
                header = Some(rec.iter().map(|s| s.trim().to_string()).collect());
            } else {
                rows.push((line, rec));
            }
        }
        Ok(header.map(|header| Table {
            path: path.to_path_buf(),
            header,
            rows,
        }))
    }

    fn expect_header(&self, expected: &[String]) -> Result<(), CliError> {
        if self.header != expected {
            return Err(CliError::schema(
                &self.path,
                1,
                format!("header `{}`, expected `{}`", self.header.join(","), expected.join(",")),
            ));
        }
        Ok(())
    }

    /// Checks the column count and parses every field of each row as `f64`
    /// (via `parse`), enforcing non-decreasing timestamps in column 0.
    fn rows<T>(
        &self,
        mut parse: impl FnMut(&Field<'_>) -> Result<T, CliError>,
    ) -> Result<Vec<T>, CliError> {
        let mut out = Vec::with_capacity(self.rows.len());
        let mut previous = f64::NEG_INFINITY;
        for (line, rec) in &self.rows {
            if rec.len() != self.header.len() {
                return Err(CliError::schema(
                    &self.path,
                    *line,
                    format!("{} columns, header has {}", rec.len(), self.header.len()),
                ));
            }
            let field = Field {
                path: &self.path,
                line: *line,
                rec,
                header: &self.header,
            };
            let t = field.num(0)?;
            if t < previous {
                return Err(CliError::Regression {
                    path: self.path.clone(),
                    line: *line,
                    t,
                    previous,
                });
            }
            previous = t;
            out.push(parse(&field)?);
        }
        Ok(out)
    }
}

struct Field<'a> {
    path: &'a Path,
    line: u64,
    rec: &'a csv::StringRecord,
    header: &'a [String],
}

impl Field<'_> {
    fn raw(&self, i: usize) -> &str {
        self.rec[i].trim()
    }

    /// Any float, `NaN` included.
    fn float(&self, i: usize) -> Result<f64, CliError> {
        self.raw(i).parse().map_err(|_| self.bad(i, "not a number"))
    }

    fn num(&self, i: usize) -> Result<f64, CliError> {
        let x = self.float(i)?;
        if !x.is_finite() {
            return Err(self.bad(i, "not finite"));
        }
        Ok(x)
    }

    fn vec3(&self, i: usize) -> Result<Vector3<f64>, CliError> {
        Ok(Vector3::new(self.num(i)?, self.num(i + 1)?, self.num(i + 2)?))
    }

    fn rotation(&self, i: usize) -> Result<Rotation, CliError> {
        Rotation::from_quaternion(self.num(i)?, self.num(i + 1)?, self.num(i + 2)?, self.num(i + 3)?)
            .map_err(|e| self.bad(i, &e.to_string()))
    }

    fn bool(&self, i: usize) -> Result<bool, CliError> {
        match self.raw(i) {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            _ => Err(self.bad(i, "expected 0 or 1")),
        }
    }

    fn bad(&self, i: usize, msg: &str) -> CliError {
        CliError::schema(
            self.path,
            self.line,
            format!("column {} (`{}`) = `{}`: {msg}", i + 1, self.header[i], self.raw(i)),
        )
    }
}

impl LogBundle {
    /// Reads a log directory. imu.csv and contacts.csv are required;
    /// camera.csv and truth.csv may be absent, and a camera.csv without
    /// data rows counts as absent.
    pub fn read(dir: &Path) -> Result<LogBundle, CliError> {
        let required = |name: &str| -> Result<Table, CliError> {
            let path = dir.join(name);
            Table::open(&path)?.ok_or_else(|| CliError::schema(&path, 1, "missing or empty".into()))
        };

        let imu_t = required("imu.csv")?;
        imu_t.expect_header(&IMU_HEADER.map(String::from))?;
        let imu = imu_t.rows(|f| {
            Ok(ImuSample {
                t: f.num(0)?,
                omega: f.vec3(1)?,
                accel: f.vec3(4)?,
            })
        })?;

        let con_t = required("contacts.csv")?;
        let n = con_t.header.len().saturating_sub(3);
        if con_t.header.len() < 3 || n % 2 != 0 {
            return Err(CliError::schema(&con_t.path, 1, "contacts header needs t,contact_id,active and paired alpha/alpha_dot columns".into()));
        }
        let joints = n / 2;
        con_t.expect_header(&contacts_header(joints))?;
        let mut contacts = con_t.rows(|f| {
            let id: u32 = f.raw(1).parse().map_err(|_| f.bad(1, "expected a non-negative integer"))?;
            Ok(ContactKinematicSample {
                t: f.num(0)?,
                contact_id: id,
                active: f.bool(2)?,
                alpha: (0..joints).map(|j| f.num(3 + j)).collect::<Result<_, _>>()?,
                alpha_dot: (0..joints).map(|j| f.num(3 + joints + j)).collect::<Result<_, _>>()?,
                omega_tilde: Vector3::zeros(),
            })
        })?;
        let mut k = 0;
        let mut latest = Vector3::zeros();
        for c in &mut contacts {
            while k < imu.len() && imu[k].t <= c.t {
                latest = imu[k].omega;
                k += 1;
            }
            c.omega_tilde = latest;
        }

        let camera = match Table::open(&dir.join("camera.csv"))? {
            None => Vec::new(),
            Some(t) => {
                t.expect_header(&CAMERA_HEADER.map(String::from))?;
                t.rows(|f| {
                    Ok(CameraVelocitySample {
                        t: f.num(0)?,
                        velocity: f.vec3(1)?,
                        omega: f.vec3(4)?,
                    })
                })?
            }
        };

        let truth = match Table::open(&dir.join("truth.csv"))? {
            None => None,
            Some(t) => {
                t.expect_header(&TRUTH_HEADER.map(String::from))?;
                Some(t.rows(|f| Ok((f.num(0)?, Se23::new(f.rotation(1)?, f.vec3(5)?, f.vec3(8)?))))?)
            }
        };

        Ok(LogBundle {
            imu,
            contacts,
            camera,
            truth,
        })
    }
}

/// Parses an estimates.csv written by [`write_estimates`].
pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRecord>, CliError> {
    let t = Table::open(path)?.ok_or_else(|| CliError::schema(path, 1, "missing or empty".into()))?;
    t.expect_header(&estimates_header())?;
    t.rows(|f| {
        let kind = match f.raw(1) {
            "kinematic" => UpdateKind::Kinematic {
                contact_id: f.raw(2).parse().map_err(|_| f.bad(2, "expected a contact id"))?,
            },
            "camera" => UpdateKind::Camera,
            _ => return Err(f.bad(1, "expected `kinematic` or `camera`")),
        };
        let state = RobotState {
            pose: Se23::new(f.rotation(5)?, f.vec3(9)?, f.vec3(12)?),
            gyro_bias: f.vec3(15)?,
            accel_bias: f.vec3(18)?,
            cam_rotation: f.rotation(21)?,
            cam_position: f.vec3(25)?,
        };
        let mut p_diag = [0.0; idx::DIM];
        for (i, p) in p_diag.iter_mut().enumerate() {
            *p = f.num(28 + i)?;
        }
        Ok(EstimateRecord {
            t: f.num(0)?,
            kind,
            accepted: f.bool(3)?,
            // NaN when the update was skipped
            chi2: f.float(4)?,
            state,
            p_diag,
        })
    })
}
