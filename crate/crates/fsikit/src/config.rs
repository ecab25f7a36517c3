//! Configuration files: `[section]` headers over `key = value` lines, with
//! `#` comments. Defaults are the tube benchmark values; unknown keys are
//! rejected.

use crate::error::{FsiError, Result};
use crate::mesh::TubeParams;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    MooneyRivlin,
    Artery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Krylov,
    Amg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToleranceModeCfg {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonStop {
    Relative,
    Absolute,
}

#[derive(Debug, Clone)]
pub struct GeometryConfig {
    pub radius: f64,
    pub length: f64,
    pub media_thickness: f64,
    pub adventitia_thickness: f64,
    pub n_axial: usize,
    pub n_circ: usize,
    pub n_radial_fluid: usize,
    pub n_radial_layer: usize,
}

#[derive(Debug, Clone)]
pub struct FluidConfig {
    pub rho: f64,
    pub viscosity_poise: f64,
    pub inlet_traction: f64,
    pub pulse_duration: f64,
}

#[derive(Debug, Clone)]
pub struct StructureConfig {
    pub model: ModelKind,
    pub rho: f64,
    pub kappa: f64,
    pub beta: f64,
    pub gamma: f64,
    // Mooney-Rivlin
    pub c10: f64,
    pub c01: f64,
    // artery layers
    pub c10_media: f64,
    pub c10_adventitia: f64,
    pub k1_media: f64,
    pub k1_adventitia: f64,
    pub k2_media: f64,
    pub k2_adventitia: f64,
    pub alpha_media_deg: f64,
    pub alpha_adventitia_deg: f64,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub fluid_solver: SolverKind,
    pub structure_solver: SolverKind,
    pub bs_steps: usize,
    pub vanka_steps: usize,
    pub vanka_omega: f64,
    pub theta: f64,
    pub tolerance_mode: ToleranceModeCfg,
    pub newton_stop: NewtonStop,
    pub eps_dn: f64,
    pub eps_newton: f64,
    pub eps_linear: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub output_every: usize,
    pub output_dir: String,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub geometry: GeometryConfig,
    pub fluid: FluidConfig,
    pub structure: StructureConfig,
    pub solver: SolverConfig,
}

impl Config {
    /// Benchmark defaults for the given wall model.
    pub fn benchmark(model: ModelKind) -> Config {
        Config {
            geometry: GeometryConfig {
                radius: 1.43,
                length: 18.0,
                media_thickness: 0.26,
                adventitia_thickness: 0.13,
                n_axial: 40,
                n_circ: 16,
                n_radial_fluid: 3,
                n_radial_layer: 2,
            },
            fluid: FluidConfig {
                rho: 1.0,
                viscosity_poise: 0.035,
                inlet_traction: 1.332,
                pulse_duration: match model {
                    ModelKind::MooneyRivlin => 1.0,
                    ModelKind::Artery => 0.125,
                },
            },
            structure: StructureConfig {
                model,
                rho: 1.2,
                kappa: 1e5,
                beta: 0.625,
                gamma: 1.0,
                c10: 3.0,
                c01: 0.3,
                c10_media: 3.0,
                c10_adventitia: 0.3,
                k1_media: 2.3632,
                k1_adventitia: 0.562,
                k2_media: 0.8393,
                k2_adventitia: 0.7112,
                alpha_media_deg: 29.0,
                alpha_adventitia_deg: 62.0,
            },
            solver: SolverConfig {
                fluid_solver: SolverKind::Amg,
                structure_solver: SolverKind::Amg,
                bs_steps: 8,
                vanka_steps: 12,
                vanka_omega: match model {
                    ModelKind::MooneyRivlin => 0.78,
                    ModelKind::Artery => 0.86,
                },
                theta: 6.0, // 2 c10 of the stiffer layer
                tolerance_mode: ToleranceModeCfg::Adaptive,
                newton_stop: NewtonStop::Relative,
                eps_dn: 1e-8,
                eps_newton: 1e-8,
                eps_linear: 1e-8,
                dt: 0.125,
                n_steps: 8,
                output_every: 1,
                output_dir: "out".to_string(),
            },
        }
    }

    pub fn tube_params(&self) -> TubeParams {
        TubeParams {
            radius: self.geometry.radius,
            length: self.geometry.length,
            media_thickness: self.geometry.media_thickness,
            adventitia_thickness: self.geometry.adventitia_thickness,
            n_axial: self.geometry.n_axial,
            n_circ: self.geometry.n_circ,
            n_radial_fluid: self.geometry.n_radial_fluid,
            n_radial_layer: self.geometry.n_radial_layer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("geometry.radius", self.geometry.radius),
            ("geometry.length", self.geometry.length),
            ("geometry.media_thickness", self.geometry.media_thickness),
            ("geometry.adventitia_thickness", self.geometry.adventitia_thickness),
            ("fluid.rho", self.fluid.rho),
            ("fluid.viscosity_poise", self.fluid.viscosity_poise),
            ("structure.rho", self.structure.rho),
            ("structure.kappa", self.structure.kappa),
            ("structure.beta", self.structure.beta),
            ("solver.theta", self.solver.theta),
            ("solver.eps_dn", self.solver.eps_dn),
            ("solver.eps_newton", self.solver.eps_newton),
            ("solver.eps_linear", self.solver.eps_linear),
            ("solver.dt", self.solver.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(FsiError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        match self.structure.model {
            ModelKind::MooneyRivlin => {
                for (name, v) in [("structure.c10", self.structure.c10), ("structure.c01", self.structure.c01)] {
                    if !(v > 0.0) {
                        return Err(FsiError::Config(format!("{name} must be positive, got {v}")));
                    }
                }
            }
            ModelKind::Artery => {
                for (name, v) in [
                    ("structure.c10_media", self.structure.c10_media),
                    ("structure.c10_adventitia", self.structure.c10_adventitia),
                    ("structure.k1_media", self.structure.k1_media),
                    ("structure.k1_adventitia", self.structure.k1_adventitia),
                    ("structure.k2_media", self.structure.k2_media),
                    ("structure.k2_adventitia", self.structure.k2_adventitia),
                ] {
                    if !(v > 0.0) {
                        return Err(FsiError::Config(format!("{name} must be positive, got {v}")));
                    }
                }
            }
        }
        if !(self.structure.beta > 0.0 && self.structure.beta <= 1.0) {
            return Err(FsiError::Config(format!(
                "structure.beta must be in (0, 1], got {}",
                self.structure.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.structure.gamma) {
            return Err(FsiError::Config(format!(
                "structure.gamma must be in [0, 1], got {}",
                self.structure.gamma
            )));
        }
        if !(self.solver.vanka_omega > 0.0 && self.solver.vanka_omega <= 1.0) {
            return Err(FsiError::Config(format!(
                "solver.vanka_omega must be in (0, 1], got {}",
                self.solver.vanka_omega
            )));
        }
        if self.solver.n_steps == 0 || self.solver.output_every == 0 {
            return Err(FsiError::Config(
                "solver.n_steps and solver.output_every must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Serializes the configuration in the same format `parse_config` reads.
    pub fn print(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# units: mm, ms, mg, kPa (1 Poise = 0.1 kPa*ms)");
        let _ = writeln!(s, "[geometry]");
        let g = &self.geometry;
        let _ = writeln!(s, "radius = {}", g.radius);
        let _ = writeln!(s, "length = {}", g.length);
        let _ = writeln!(s, "media_thickness = {}", g.media_thickness);
        let _ = writeln!(s, "adventitia_thickness = {}", g.adventitia_thickness);
        let _ = writeln!(s, "n_axial = {}", g.n_axial);
        let _ = writeln!(s, "n_circ = {}", g.n_circ);
        let _ = writeln!(s, "n_radial_fluid = {}", g.n_radial_fluid);
        let _ = writeln!(s, "n_radial_layer = {}", g.n_radial_layer);
        let _ = writeln!(s, "\n[fluid]");
        let f = &self.fluid;
        let _ = writeln!(s, "rho = {}", f.rho);
        let _ = writeln!(s, "viscosity_poise = {}", f.viscosity_poise);
        let _ = writeln!(s, "inlet_traction = {}", f.inlet_traction);
        let _ = writeln!(s, "pulse_duration = {}", f.pulse_duration);
        let _ = writeln!(s, "\n[structure]");
        let st = &self.structure;
        let _ = writeln!(
            s,
            "model = {}",
            match st.model {
                ModelKind::MooneyRivlin => "mooney_rivlin",
                ModelKind::Artery => "artery",
            }
        );
        let _ = writeln!(s, "rho = {}", st.rho);
        let _ = writeln!(s, "kappa = {}", st.kappa);
        let _ = writeln!(s, "beta = {}", st.beta);
        let _ = writeln!(s, "gamma = {}", st.gamma);
        match st.model {
            ModelKind::MooneyRivlin => {
                let _ = writeln!(s, "c10 = {}", st.c10);
                let _ = writeln!(s, "c01 = {}", st.c01);
            }
            ModelKind::Artery => {
                let _ = writeln!(s, "c10_media = {}", st.c10_media);
                let _ = writeln!(s, "c10_adventitia = {}", st.c10_adventitia);
                let _ = writeln!(s, "k1_media = {}", st.k1_media);
                let _ = writeln!(s, "k1_adventitia = {}", st.k1_adventitia);
                let _ = writeln!(s, "k2_media = {}", st.k2_media);
                let _ = writeln!(s, "k2_adventitia = {}", st.k2_adventitia);
                let _ = writeln!(s, "alpha_media_deg = {}", st.alpha_media_deg);
                let _ = writeln!(s, "alpha_adventitia_deg = {}", st.alpha_adventitia_deg);
            }
        }
        let _ = writeln!(s, "\n[solver]");
        let so = &self.solver;
        let kind = |k: SolverKind| match k {
            SolverKind::Krylov => "krylov",
            SolverKind::Amg => "amg",
        };
        let _ = writeln!(s, "fluid_solver = {}", kind(so.fluid_solver));
        let _ = writeln!(s, "structure_solver = {}", kind(so.structure_solver));
        let _ = writeln!(s, "bs_steps = {}", so.bs_steps);
        let _ = writeln!(s, "vanka_steps = {}", so.vanka_steps);
        let _ = writeln!(s, "vanka_omega = {}", so.vanka_omega);
        let _ = writeln!(s, "theta = {}", so.theta);
        let _ = writeln!(
            s,
            "tolerance_mode = {}",
            match so.tolerance_mode {
                ToleranceModeCfg::Fixed => "fixed",
                ToleranceModeCfg::Adaptive => "adaptive",
            }
        );
        let _ = writeln!(
            s,
            "newton_stop = {}",
            match so.newton_stop {
                NewtonStop::Relative => "relative",
                NewtonStop::Absolute => "absolute",
            }
        );
        let _ = writeln!(s, "eps_dn = {}", so.eps_dn);
        let _ = writeln!(s, "eps_newton = {}", so.eps_newton);
        let _ = writeln!(s, "eps_linear = {}", so.eps_linear);
        let _ = writeln!(s, "dt = {}", so.dt);
        let _ = writeln!(s, "n_steps = {}", so.n_steps);
        let _ = writeln!(s, "output_every = {}", so.output_every);
        let _ = writeln!(s, "output_dir = {}", so.output_dir);
        s
    }
}

struct RawConfig {
    /// section -> key -> (value, line)
    sections: HashMap<String, HashMap<String, (String, usize)>>,
}

fn parse_raw(text: &str) -> Result<RawConfig> {
    let mut sections: HashMap<String, HashMap<String, (String, usize)>> = HashMap::new();
    let mut current: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(FsiError::Parse {
                    line: line_no,
                    msg: format!("malformed section header '{line}'"),
                });
            }
            let name = line[1..line.len() - 1].trim().to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(FsiError::Parse {
                line: line_no,
                msg: format!("expected 'key = value', found '{line}'"),
            });
        };
        let section = current.as_ref().ok_or_else(|| FsiError::Parse {
            line: line_no,
            msg: "key outside of any [section]".into(),
        })?;
        sections
            .get_mut(section)
            .unwrap()
            .insert(key.trim().to_string(), (value.trim().to_string(), line_no));
    }
    Ok(RawConfig { sections })
}

struct SectionReader<'a> {
    name: &'a str,
    map: HashMap<String, (String, usize)>,
}

impl<'a> SectionReader<'a> {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| FsiError::Parse {
                line,
                msg: format!("bad value '{v}' for {}.{key}", self.name),
            }),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.map.into_iter().next() {
            return Err(FsiError::Parse {
                line,
                msg: format!("unknown key '{key}' in [{}]", self.name),
            });
        }
        Ok(())
    }
}

/// Parses and validates a configuration file. Missing keys fall back to the
/// benchmark defaults of the declared model; unknown keys are errors.
pub fn parse_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|source| FsiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<Config> {
    let mut raw = parse_raw(text)?;
    if !raw.sections.contains_key("geometry") {
        return Err(FsiError::Config("missing [geometry] section".into()));
    }
    for required in ["fluid", "structure", "solver"] {
        if !raw.sections.contains_key(required) {
            return Err(FsiError::Config(format!("missing [{required}] section")));
        }
    }
    // the model decides the defaults, so peek at it first
    let model = match raw
        .sections
        .get("structure")
        .and_then(|s| s.get("model"))
        .map(|(v, l)| (v.clone(), *l))
    {
        Some((v, line)) => match v.as_str() {
            "mooney_rivlin" => ModelKind::MooneyRivlin,
            "artery" => ModelKind::Artery,
            other => {
                return Err(FsiError::Parse {
                    line,
                    msg: format!("unknown structure.model '{other}'"),
                })
            }
        },
        None => ModelKind::MooneyRivlin,
    };
    let mut cfg = Config::benchmark(model);

    let sec = |name: &'static str, raw: &mut RawConfig| SectionReader {
        name,
        map: raw.sections.remove(name).unwrap_or_default(),
    };

    {
        let mut g = sec("geometry", &mut raw);
        cfg.geometry.radius = g.parse("radius", cfg.geometry.radius)?;
        cfg.geometry.length = g.parse("length", cfg.geometry.length)?;
        cfg.geometry.media_thickness = g.parse("media_thickness", cfg.geometry.media_thickness)?;
        cfg.geometry.adventitia_thickness =
            g.parse("adventitia_thickness", cfg.geometry.adventitia_thickness)?;
        cfg.geometry.n_axial = g.parse("n_axial", cfg.geometry.n_axial)?;
        cfg.geometry.n_circ = g.parse("n_circ", cfg.geometry.n_circ)?;
        cfg.geometry.n_radial_fluid = g.parse("n_radial_fluid", cfg.geometry.n_radial_fluid)?;
        cfg.geometry.n_radial_layer = g.parse("n_radial_layer", cfg.geometry.n_radial_layer)?;
        g.finish()?;
    }
    {
        let mut f = sec("fluid", &mut raw);
        cfg.fluid.rho = f.parse("rho", cfg.fluid.rho)?;
        cfg.fluid.viscosity_poise = f.parse("viscosity_poise", cfg.fluid.viscosity_poise)?;
        cfg.fluid.inlet_traction = f.parse("inlet_traction", cfg.fluid.inlet_traction)?;
        cfg.fluid.pulse_duration = f.parse("pulse_duration", cfg.fluid.pulse_duration)?;
        f.finish()?;
    }
    {
        let mut st = sec("structure", &mut raw);
        st.take("model");
        cfg.structure.rho = st.parse("rho", cfg.structure.rho)?;
        cfg.structure.kappa = st.parse("kappa", cfg.structure.kappa)?;
        cfg.structure.beta = st.parse("beta", cfg.structure.beta)?;
        cfg.structure.gamma = st.parse("gamma", cfg.structure.gamma)?;
        match model {
            ModelKind::MooneyRivlin => {
                cfg.structure.c10 = st.parse("c10", cfg.structure.c10)?;
                cfg.structure.c01 = st.parse("c01", cfg.structure.c01)?;
            }
            ModelKind::Artery => {
                cfg.structure.c10_media = st.parse("c10_media", cfg.structure.c10_media)?;
                cfg.structure.c10_adventitia =
                    st.parse("c10_adventitia", cfg.structure.c10_adventitia)?;
                cfg.structure.k1_media = st.parse("k1_media", cfg.structure.k1_media)?;
                cfg.structure.k1_adventitia =
                    st.parse("k1_adventitia", cfg.structure.k1_adventitia)?;
                cfg.structure.k2_media = st.parse("k2_media", cfg.structure.k2_media)?;
                cfg.structure.k2_adventitia =
                    st.parse("k2_adventitia", cfg.structure.k2_adventitia)?;
                cfg.structure.alpha_media_deg =
                    st.parse("alpha_media_deg", cfg.structure.alpha_media_deg)?;
                cfg.structure.alpha_adventitia_deg =
                    st.parse("alpha_adventitia_deg", cfg.structure.alpha_adventitia_deg)?;
            }
        }
        st.finish()?;
    }
    {
        let mut so = sec("solver", &mut raw);
        let parse_kind = |r: &mut SectionReader, key: &str, default: SolverKind| -> Result<SolverKind> {
            match r.take(key) {
                None => Ok(default),
                Some((v, line)) => match v.as_str() {
                    "krylov" => Ok(SolverKind::Krylov),
                    "amg" => Ok(SolverKind::Amg),
                    other => Err(FsiError::Parse {
                        line,
                        msg: format!("unknown solver kind '{other}' for {key}"),
                    }),
                },
            }
        };
        cfg.solver.fluid_solver = parse_kind(&mut so, "fluid_solver", cfg.solver.fluid_solver)?;
        cfg.solver.structure_solver =
            parse_kind(&mut so, "structure_solver", cfg.solver.structure_solver)?;
        cfg.solver.bs_steps = so.parse("bs_steps", cfg.solver.bs_steps)?;
        cfg.solver.vanka_steps = so.parse("vanka_steps", cfg.solver.vanka_steps)?;
        cfg.solver.vanka_omega = so.parse("vanka_omega", cfg.solver.vanka_omega)?;
        cfg.solver.theta = so.parse("theta", cfg.solver.theta)?;
        cfg.solver.tolerance_mode = match so.take("tolerance_mode") {
            None => cfg.solver.tolerance_mode,
            Some((v, line)) => match v.as_str() {
                "fixed" => ToleranceModeCfg::Fixed,
                "adaptive" => ToleranceModeCfg::Adaptive,
                other => {
                    return Err(FsiError::Parse {
                        line,
                        msg: format!("unknown tolerance_mode '{other}'"),
                    })
                }
            },
        };
        cfg.solver.newton_stop = match so.take("newton_stop") {
            None => cfg.solver.newton_stop,
            Some((v, line)) => match v.as_str() {
                "relative" => NewtonStop::Relative,
                "absolute" => NewtonStop::Absolute,
                other => {
                    return Err(FsiError::Parse {
                        line,
                        msg: format!("unknown newton_stop '{other}'"),
                    })
                }
            },
        };
        cfg.solver.eps_dn = so.parse("eps_dn", cfg.solver.eps_dn)?;
        cfg.solver.eps_newton = so.parse("eps_newton", cfg.solver.eps_newton)?;
        cfg.solver.eps_linear = so.parse("eps_linear", cfg.solver.eps_linear)?;
        cfg.solver.dt = so.parse("dt", cfg.solver.dt)?;
        cfg.solver.n_steps = so.parse("n_steps", cfg.solver.n_steps)?;
        cfg.solver.output_every = so.parse("output_every", cfg.solver.output_every)?;
        if let Some((v, _)) = so.take("output_dir") {
            cfg.solver.output_dir = v;
        }
        so.finish()?;
    }
    if let Some(name) = raw.sections.keys().next() {
        return Err(FsiError::Config(format!("unknown section [{name}]")));
    }
    cfg.validate()?;
    Ok(cfg)
}
