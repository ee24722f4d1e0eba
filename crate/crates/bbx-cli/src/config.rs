//! Scenario config files: flat `key = value` entries under `[section]`
//! headers. Unknown sections and unknown keys are hard errors so that a
//! typo cannot silently fall back to a default.

use bearing_box::geometry::{CameraIntrinsics, Cuboid};
use bearing_box::scenarios;
use bearing_box::simulator::{NoiseMode, Scenario, TrajectoryProgram};
use nalgebra::Vector3;
use std::collections::BTreeMap;

pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type Section = BTreeMap<String, (String, usize)>;

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError(format!("line {line_no}: malformed section header")))?
                .trim()
                .to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {line_no}: expected 'key = value'")))?;
        let section = current
            .clone()
            .ok_or_else(|| ConfigError(format!("line {line_no}: key outside any [section]")))?;
        let prev = sections
            .entry(section.clone())
            .or_default()
            .insert(key.trim().to_string(), (value.trim().to_string(), line_no));
        if prev.is_some() {
            return Err(ConfigError(format!(
                "line {line_no}: duplicate key '{}' in [{section}]",
                key.trim()
            )));
        }
    }
    Ok(sections)
}

struct SectionReader {
    name: String,
    entries: Section,
}

impl SectionReader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.take(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| self.bad(key, &v, "a number"))
            })
            .transpose()
    }

    fn take_u64(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.take(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| self.bad(key, &v, "an unsigned integer"))
            })
            .transpose()
    }

    fn take_u32(&mut self, key: &str) -> Result<Option<u32>, ConfigError> {
        self.take(key)
            .map(|v| {
                v.parse::<u32>()
                    .map_err(|_| self.bad(key, &v, "an unsigned integer"))
            })
            .transpose()
    }

    fn take_bool(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.take(key)
            .map(|v| match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(self.bad(key, &v, "true or false")),
            })
            .transpose()
    }

    fn take_vec3(&mut self, key: &str) -> Result<Option<Vector3<f64>>, ConfigError> {
        self.take(key)
            .map(|v| parse_vec3(&v).ok_or_else(|| self.bad(key, &v, "three numbers 'x y z'")))
            .transpose()
    }

    fn take_vec3_list(&mut self, key: &str) -> Result<Option<Vec<Vector3<f64>>>, ConfigError> {
        self.take(key)
            .map(|v| {
                v.split(';')
                    .map(|item| {
                        parse_vec3(item).ok_or_else(|| {
                            self.bad(key, &v, "semicolon-separated triples 'x y z; x y z'")
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()
    }

    fn require_f64(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.take_f64(key)?
            .ok_or_else(|| ConfigError(format!("[{}] is missing key '{key}'", self.name)))
    }

    fn require_vec3(&mut self, key: &str) -> Result<Vector3<f64>, ConfigError> {
        self.take_vec3(key)?
            .ok_or_else(|| ConfigError(format!("[{}] is missing key '{key}'", self.name)))
    }

    fn bad(&self, key: &str, value: &str, expected: &str) -> ConfigError {
        ConfigError(format!(
            "[{}] key '{key}': '{value}' is not {expected}",
            self.name
        ))
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some(key) = self.entries.keys().next() {
            return Err(ConfigError(format!(
                "unknown key '{key}' in section [{}]",
                self.name
            )));
        }
        Ok(())
    }
}

fn parse_vec3(s: &str) -> Option<Vector3<f64>> {
    let parts: Vec<f64> = s
        .split_whitespace()
        .map(|p| p.parse::<f64>().ok())
        .collect::<Option<Vec<_>>>()?;
    (parts.len() == 3).then(|| Vector3::new(parts[0], parts[1], parts[2]))
}

fn parse_trajectory(mut sec: SectionReader) -> Result<TrajectoryProgram, ConfigError> {
    let kind = sec
        .take("kind")
        .ok_or_else(|| ConfigError(format!("[{}] is missing key 'kind'", sec.name)))?;
    let program = match kind.as_str() {
        "stationary" => TrajectoryProgram::Stationary {
            position: sec.require_vec3("position")?,
        },
        "constant_velocity" => TrajectoryProgram::ConstantVelocity {
            position: sec.require_vec3("position")?,
            velocity: sec.require_vec3("velocity")?,
        },
        "straight_lines" => TrajectoryProgram::StraightLines {
            waypoints: sec
                .take_vec3_list("waypoints")?
                .ok_or_else(|| ConfigError(format!("[{}] is missing key 'waypoints'", sec.name)))?,
            speed: sec.require_f64("speed")?,
        },
        "circle" => TrajectoryProgram::Circle {
            center: sec.require_vec3("center")?,
            radius: sec.require_f64("radius")?,
            speed: sec.require_f64("speed")?,
            phase: sec.take_f64("phase")?.unwrap_or(0.0),
        },
        "spiral" => TrajectoryProgram::Spiral {
            center: sec.require_vec3("center")?,
            radius: sec.require_f64("radius")?,
            speed: sec.require_f64("speed")?,
            climb_rate: sec.require_f64("climb_rate")?,
            phase: sec.take_f64("phase")?.unwrap_or(0.0),
        },
        "zigzag" => TrajectoryProgram::Zigzag {
            start: sec.require_vec3("start")?,
            forward: sec.require_vec3("forward")?,
            speed: sec.require_f64("speed")?,
            half_period: sec.require_f64("half_period")?,
            angle: sec.require_f64("angle")?,
        },
        "guidance" => TrajectoryProgram::Guidance {
            start: sec.require_vec3("start")?,
            speed: sec.require_f64("speed")?,
            lag: sec.take_f64("lag")?.unwrap_or(0.5),
            standoff: sec.take_f64("standoff")?.unwrap_or(4.0),
            gain: sec.take_f64("gain")?.unwrap_or(1.0),
        },
        "polynomial" => TrajectoryProgram::Polynomial {
            coeffs: sec
                .take_vec3_list("coeffs")?
                .ok_or_else(|| ConfigError(format!("[{}] is missing key 'coeffs'", sec.name)))?,
        },
        other => {
            return Err(ConfigError(format!(
                "[{}] unknown trajectory kind '{other}'",
                sec.name
            )))
        }
    };
    sec.finish()?;
    Ok(program)
}

/// Parses a scenario config. If `[scenario] name` references a built-in,
/// that scenario seeds the defaults and every other key overrides it;
/// otherwise `[observer]` and `[target]` are required.
pub fn parse_scenario_config(text: &str) -> Result<Scenario, ConfigError> {
    let mut sections = parse_sections(text)?;
    for name in sections.keys() {
        if !["scenario", "observer", "target", "camera", "noise", "init"].contains(&name.as_str())
        {
            return Err(ConfigError(format!("unknown section [{name}]")));
        }
    }

    let mut scenario_sec = SectionReader {
        name: "scenario".into(),
        entries: sections.remove("scenario").unwrap_or_default(),
    };

    let mut sc = match scenario_sec.take("name") {
        Some(name) => scenarios::builtin(&name).ok_or_else(|| {
            ConfigError(format!(
                "unknown built-in scenario '{name}' (available: {})",
                scenarios::BUILTIN_NAMES.join(", ")
            ))
        })?,
        None => {
            if !sections.contains_key("observer") || !sections.contains_key("target") {
                return Err(ConfigError(
                    "config without '[scenario] name' must define [observer] and [target]".into(),
                ));
            }
            scenarios::builtin("case4").expect("base scenario exists")
        }
    };

    if let Some(dt) = scenario_sec.take_f64("dt")? {
        sc.dt = dt;
    }
    if let Some(duration) = scenario_sec.take_f64("duration")? {
        sc.duration = duration;
    }
    if let Some(seed) = scenario_sec.take_u64("seed")? {
        sc.seed = seed;
    }
    if let Some(is_mav) = scenario_sec.take_bool("target_is_mav")? {
        sc.target_is_mav = is_mav;
    }
    if let Some(label) = scenario_sec.take("label") {
        sc.name = label;
    }
    let noise_mode = scenario_sec.take("noise_mode");
    let sigma_vertex = scenario_sec.take_f64("sigma_vertex")?;
    let sigma_rot = scenario_sec.take_f64("sigma_rot")?;
    match noise_mode.as_deref() {
        None => {
            if sigma_vertex.is_some() || sigma_rot.is_some() {
                return Err(ConfigError(
                    "sigma_vertex/sigma_rot are only valid with 'noise_mode = detection'".into(),
                ));
            }
        }
        Some("pseudo") => sc.noise_mode = NoiseMode::PseudoMeasurement,
        Some("detection") => {
            sc.noise_mode = NoiseMode::Detection {
                sigma_vertex: sigma_vertex.unwrap_or(0.002),
                sigma_rot: sigma_rot.unwrap_or(0.01),
            }
        }
        Some(other) => {
            return Err(ConfigError(format!(
                "[scenario] key 'noise_mode': '{other}' is not one of pseudo, detection"
            )))
        }
    }
    scenario_sec.finish()?;

    if let Some(entries) = sections.remove("observer") {
        sc.observer = parse_trajectory(SectionReader {
            name: "observer".into(),
            entries,
        })?;
    }
    if let Some(entries) = sections.remove("target") {
        let mut sec = SectionReader {
            name: "target".into(),
            entries,
        };
        if let Some(c) = sec.take_vec3("cuboid")? {
            sc.target_cuboid = Cuboid::new(c.x, c.y, c.z)
                .map_err(|e| ConfigError(format!("[target] key 'cuboid': {e}")))?;
        }
        sc.target = parse_trajectory(sec)?;
    }
    if let Some(entries) = sections.remove("camera") {
        let mut sec = SectionReader {
            name: "camera".into(),
            entries,
        };
        let d = CameraIntrinsics::default();
        sc.camera = CameraIntrinsics::new(
            sec.take_f64("fx")?.unwrap_or(d.fx),
            sec.take_f64("fy")?.unwrap_or(d.fy),
            sec.take_f64("cx")?.unwrap_or(d.cx),
            sec.take_f64("cy")?.unwrap_or(d.cy),
            sec.take_u32("width")?.unwrap_or(d.width),
            sec.take_u32("height")?.unwrap_or(d.height),
        );
        sec.finish()?;
    }
    if let Some(entries) = sections.remove("noise") {
        let mut sec = SectionReader {
            name: "noise".into(),
            entries,
        };
        macro_rules! noise_key {
            ($field:ident, $key:literal) => {
                if let Some(v) = sec.take_f64($key)? {
                    sc.noise.$field = v;
                }
            };
        }
        noise_key!(sigma_tbar, "sigma_tbar");
        noise_key!(sigma_h, "sigma_h");
        noise_key!(sigma_p, "sigma_p");
        noise_key!(sigma_v, "sigma_v");
        noise_key!(sigma_a, "sigma_a");
        noise_key!(sigma_alpha, "sigma_alpha");
        noise_key!(sigma_bearing, "sigma_bearing");
        noise_key!(sigma_angle, "sigma_angle");
        noise_key!(g, "g");
        sec.finish()?;
    }
    if let Some(entries) = sections.remove("init") {
        let mut sec = SectionReader {
            name: "init".into(),
            entries,
        };
        if let Some(v) = sec.take_vec3("p0")? {
            sc.init.p0 = v;
        }
        if let Some(v) = sec.take_vec3("v0")? {
            sc.init.v0 = v;
        }
        if let Some(v) = sec.take_vec3("a0")? {
            sc.init.a0 = v;
        }
        if let Some(v) = sec.take_f64("alpha0")? {
            sc.init.alpha0 = v;
        }
        if let Some(v) = sec.take_f64("cov0")? {
            sc.init.cov0 = v;
        }
        sec.finish()?;
    }

    Ok(sc)
}
