//! Four-box overturning surrogate: north, south, low-latitude and deep boxes
//! exchanging volume and salt, integrated with fixed-step RK4.
//!
//! Temperatures are fixed. The prognostic state is the north and south
//! salinities, the salt content of the low and deep boxes, and the depth of
//! the low box. `M_n` is diagnosed from the north/low density contrast at
//! every stored step.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the step count accepted by [`Simulator::run`].
pub const MAX_STEPS: u32 = 1_000_000;

/// Depth margin used to clamp `D_low` away from the surface and the floor.
pub const DEPTH_MARGIN: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("numerical blowup at step {step}: {detail} (dt too large for these parameters?)")]
    NumericalBlowup { step: u32, detail: String },
}

#[derive(Debug, Error)]
pub enum ConstantsError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown constant `{0}`")]
    UnknownKey(String),
    #[error("constant `{key}` out of range: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("reading constants file: {0}")]
    Io(#[from] std::io::Error),
}

/// Overridable run parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxModelParams {
    /// Northern freshwater flux (m³/s).
    #[serde(rename = "Fwn")]
    pub fwn: f64,
    /// Southern freshwater flux (m³/s).
    #[serde(rename = "Fws")]
    pub fws: f64,
    /// Ekman transport (m³/s).
    #[serde(rename = "M_ek")]
    pub m_ek: f64,
    /// Initial low-box depth (m).
    #[serde(rename = "D_low0")]
    pub d_low0: f64,
    /// Overturning friction coefficient (1/s).
    pub epsilon: f64,
    /// Number of steps.
    #[serde(rename = "N")]
    pub n: u32,
    /// Step size (s).
    pub dt: f64,
}

impl Default for BoxModelParams {
    fn default() -> Self {
        default_params()
    }
}

/// Canonical defaults. A 4000-step run with 30-day steps.
pub fn default_params() -> BoxModelParams {
    BoxModelParams {
        fwn: 4.5e4,
        fws: 7.5e4,
        m_ek: 2.5e7,
        d_low0: 400.0,
        epsilon: 1.2e-4,
        n: 4000,
        dt: 2.592e6,
    }
}

impl BoxModelParams {
    pub fn validate(&self, constants: &Constants) -> Result<(), BoxModelError> {
        let bad = |msg: String| Err(BoxModelError::InvalidParams(msg));
        let finite = [
            ("Fwn", self.fwn),
            ("Fws", self.fws),
            ("M_ek", self.m_ek),
            ("D_low0", self.d_low0),
            ("epsilon", self.epsilon),
            ("dt", self.dt),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if self.n < 1 {
            return bad("N must be at least 1".into());
        }
        if self.n > MAX_STEPS {
            return bad(format!("N must be at most {MAX_STEPS}, got {}", self.n));
        }
        if self.dt <= 0.0 {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.d_low0 <= 0.0 || self.d_low0 >= constants.h {
            return bad(format!(
                "D_low0 must lie in (0, {}), got {}",
                constants.h, self.d_low0
            ));
        }
        if self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.m_ek < 0.0 {
            return bad(format!("M_ek must be non-negative, got {}", self.m_ek));
        }
        if self.fwn < 0.0 {
            return bad(format!("Fwn must be non-negative, got {}", self.fwn));
        }
        if self.fws < 0.0 {
            return bad(format!("Fws must be non-negative, got {}", self.fws));
        }
        Ok(())
    }
}

/// Fixed geometry, initial state and equation-of-state constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    #[serde(rename = "A_low")]
    pub a_low: f64,
    #[serde(rename = "V_n")]
    pub v_n: f64,
    #[serde(rename = "V_s")]
    pub v_s: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "T_n")]
    pub t_n: f64,
    #[serde(rename = "T_s")]
    pub t_s: f64,
    #[serde(rename = "T_low")]
    pub t_low: f64,
    #[serde(rename = "T_deep")]
    pub t_deep: f64,
    #[serde(rename = "S_n0")]
    pub s_n0: f64,
    #[serde(rename = "S_s0")]
    pub s_s0: f64,
    #[serde(rename = "S_low0")]
    pub s_low0: f64,
    #[serde(rename = "S_deep0")]
    pub s_deep0: f64,
    /// Reference salinity converting freshwater fluxes into virtual salt fluxes.
    #[serde(rename = "S0")]
    pub s0: f64,
    pub alpha_t: f64,
    pub beta_s: f64,
    pub rho0: f64,
    #[serde(rename = "K_n")]
    pub k_n: f64,
    #[serde(rename = "K_GM")]
    pub k_gm: f64,
    #[serde(rename = "K_v")]
    pub k_v: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            a_low: 2.6e14,
            v_n: 3e15,
            v_s: 9e15,
            h: 4000.0,
            t_n: 5.0,
            t_s: 7.0,
            t_low: 20.0,
            t_deep: 3.0,
            s_n0: 35.0,
            s_s0: 34.5,
            s_low0: 36.0,
            s_deep0: 34.7,
            // 35 psu puts the Fwn collapse threshold above 12x the default
            // flux; 50 brings it to ~9x.
            s0: 50.0,
            alpha_t: 2e-4,
            beta_s: 8e-4,
            rho0: 1027.0,
            k_n: 4.9,
            k_gm: 4.275e4,
            k_v: 1e-5,
        }
    }
}

const CONSTANT_KEYS: [&str; 19] = [
    "A_low", "V_n", "V_s", "H", "T_n", "T_s", "T_low", "T_deep", "S_n0", "S_s0", "S_low0",
    "S_deep0", "S0", "alpha_T", "beta_S", "rho0", "K_n", "K_GM", "K_v",
];

impl Constants {
    /// Linear equation of state.
    pub fn density(&self, temperature: f64, salinity: f64) -> f64 {
        self.rho0 * (1.0 - self.alpha_t * temperature + self.beta_s * salinity)
    }

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "A_low" => &mut self.a_low,
            "V_n" => &mut self.v_n,
            "V_s" => &mut self.v_s,
            "H" => &mut self.h,
            "T_n" => &mut self.t_n,
            "T_s" => &mut self.t_s,
            "T_low" => &mut self.t_low,
            "T_deep" => &mut self.t_deep,
            "S_n0" => &mut self.s_n0,
            "S_s0" => &mut self.s_s0,
            "S_low0" => &mut self.s_low0,
            "S_deep0" => &mut self.s_deep0,
            "S0" => &mut self.s0,
            "alpha_T" => &mut self.alpha_t,
            "beta_S" => &mut self.beta_s,
            "rho0" => &mut self.rho0,
            "K_n" => &mut self.k_n,
            "K_GM" => &mut self.k_gm,
            "K_v" => &mut self.k_v,
            _ => return None,
        })
    }

    /// Parses `key = value` lines on top of the built-in defaults. Blank
    /// lines and `#` comments are ignored; unspecified keys keep defaults.
    pub fn parse_kv(text: &str) -> Result<Self, ConstantsError> {
        let mut constants = Constants::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConstantsError::Syntax {
                line: idx + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            let key = key.trim();
            let value: f64 = value.trim().parse().map_err(|_| ConstantsError::Syntax {
                line: idx + 1,
                message: format!("`{}` is not a number", value.trim()),
            })?;
            let slot = constants
                .slot(key)
                .ok_or_else(|| ConstantsError::UnknownKey(key.to_string()))?;
            *slot = value;
        }
        constants.validate()?;
        Ok(constants)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConstantsError> {
        Self::parse_kv(&std::fs::read_to_string(path)?)
    }

    /// Loads the file named by `QAPT_CONSTANTS`, or the defaults when unset.
    pub fn from_env() -> Result<Self, ConstantsError> {
        match std::env::var_os("QAPT_CONSTANTS") {
            Some(path) if !path.is_empty() => Self::from_file(path),
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConstantsError> {
        let mut copy = *self;
        for key in CONSTANT_KEYS {
            let v = *copy.slot(key).expect("known key");
            let temperature = key.starts_with("T_");
            if !v.is_finite() {
                return Err(ConstantsError::Invalid {
                    key,
                    message: format!("{v} is not finite"),
                });
            }
            if !temperature && v <= 0.0 {
                return Err(ConstantsError::Invalid {
                    key,
                    message: format!("{v} must be positive"),
                });
            }
            if (key.starts_with("S_") || key == "S0") && !(0.0..=50.0).contains(&v) {
                return Err(ConstantsError::Invalid {
                    key,
                    message: format!("{v} outside [0, 50] psu"),
                });
            }
        }
        if self.h <= 2.0 * DEPTH_MARGIN {
            return Err(ConstantsError::Invalid {
                key: "H",
                message: format!("total depth must exceed {}", 2.0 * DEPTH_MARGIN),
            });
        }
        Ok(())
    }

    /// Serializes back to the `key = value` format.
    pub fn to_kv(&self) -> String {
        let mut copy = *self;
        let mut out = String::new();
        for key in CONSTANT_KEYS {
            let v = *copy.slot(key).expect("known key");
            out.push_str(&format!("{key} = {v:e}\n"));
        }
        out
    }
}

/// Per-step output of one run. Every series has length `N + 1`; index 0 is
/// the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub params: BoxModelParams,
    #[serde(rename = "M_n")]
    pub m_n: Vec<f64>,
    #[serde(rename = "S_north")]
    pub s_north: Vec<f64>,
    #[serde(rename = "S_south")]
    pub s_south: Vec<f64>,
    #[serde(rename = "S_low")]
    pub s_low: Vec<f64>,
    #[serde(rename = "S_deep")]
    pub s_deep: Vec<f64>,
    #[serde(rename = "T_low")]
    pub t_low: Vec<f64>,
    #[serde(rename = "D_low")]
    pub d_low: Vec<f64>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn len(&self) -> usize {
        self.m_n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_n.is_empty()
    }

    /// Total salt content Σ V·S at step `t`.
    pub fn total_salt(&self, constants: &Constants, t: usize) -> f64 {
        let d = self.d_low[t];
        constants.v_n * self.s_north[t]
            + constants.v_s * self.s_south[t]
            + constants.a_low * d * self.s_low[t]
            + constants.a_low * (constants.h - d) * self.s_deep[t]
    }
}

// s_n, s_s, salt_low, salt_deep, d_low
type State = [f64; 5];

/// Salt carried by a directed flow from box `a` to box `b`; a negative flow
/// carries the destination's water back upstream.
fn upstream(flow: f64, s_from: f64, s_to: f64) -> f64 {
    if flow >= 0.0 {
        flow * s_from
    } else {
        flow * s_to
    }
}

#[derive(Debug, Clone, Default)]
pub struct Simulator {
    constants: Constants,
}

impl Simulator {
    pub fn new(constants: Constants) -> Self {
        Simulator { constants }
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    /// Overturning transport `K_n·(ρ_n − ρ_low)/ρ0·D²/ε`.
    pub fn overturning(&self, s_north: f64, s_low: f64, d_low: f64, epsilon: f64) -> f64 {
        let c = &self.constants;
        let drho = c.density(c.t_n, s_north) - c.density(c.t_low, s_low);
        c.k_n * (drho / c.rho0) * d_low * d_low / epsilon
    }

    fn initial_state(&self, p: &BoxModelParams) -> State {
        let c = &self.constants;
        [
            c.s_n0,
            c.s_s0,
            c.s_low0 * c.a_low * p.d_low0,
            c.s_deep0 * c.a_low * (c.h - p.d_low0),
            p.d_low0,
        ]
    }

    fn salinities(&self, y: &State) -> (f64, f64) {
        let c = &self.constants;
        let d = y[4];
        (y[2] / (c.a_low * d), y[3] / (c.a_low * (c.h - d)))
    }

    fn tendency(&self, y: &State, p: &BoxModelParams) -> State {
        let c = &self.constants;
        let [s_n, s_s, _, _, d] = *y;
        let (s_low, s_deep) = self.salinities(y);

        let m_n = self.overturning(s_n, s_low, d, p.epsilon);
        let m_eddy = c.k_gm * d;
        let m_up = c.k_v * c.a_low / d;
        let m_ek = p.m_ek;
        let m_ds = m_ek - m_eddy;

        let (mut north, mut south, mut low, mut deep) = (0.0, 0.0, 0.0, 0.0);
        let f = upstream(m_n, s_low, s_n);
        low -= f;
        north += f;
        let f = upstream(m_n, s_n, s_deep);
        north -= f;
        deep += f;
        let f = upstream(m_up, s_deep, s_low);
        deep -= f;
        low += f;
        let f = upstream(m_ek, s_s, s_low);
        south -= f;
        low += f;
        let f = upstream(m_eddy, s_low, s_s);
        low -= f;
        south += f;
        let f = upstream(m_ds, s_deep, s_s);
        deep -= f;
        south += f;

        north -= p.fwn * c.s0;
        south -= p.fws * c.s0;
        low += (p.fwn + p.fws) * c.s0;

        [
            north / c.v_n,
            south / c.v_s,
            low,
            deep,
            (m_ek + m_up - m_eddy - m_n) / c.a_low,
        ]
    }

    fn rk4_step(&self, y: &State, p: &BoxModelParams) -> State {
        let dt = p.dt;
        let axpy =
            |a: &State, k: &State, h: f64| -> State { std::array::from_fn(|i| a[i] + h * k[i]) };
        let k1 = self.tendency(y, p);
        let k2 = self.tendency(&axpy(y, &k1, dt / 2.0), p);
        let k3 = self.tendency(&axpy(y, &k2, dt / 2.0), p);
        let k4 = self.tendency(&axpy(y, &k3, dt), p);
        std::array::from_fn(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    pub fn run(&self, params: &BoxModelParams) -> Result<RunOutput, BoxModelError> {
        params.validate(&self.constants)?;
        let c = &self.constants;
        let len = params.n as usize + 1;
        let mut out = RunOutput {
            params: *params,
            m_n: Vec::with_capacity(len),
            s_north: Vec::with_capacity(len),
            s_south: Vec::with_capacity(len),
            s_low: Vec::with_capacity(len),
            s_deep: Vec::with_capacity(len),
            t_low: vec![c.t_low; len],
            d_low: Vec::with_capacity(len),
            warnings: Vec::new(),
        };

        let mut y = self.initial_state(params);
        let mut clamps = 0u32;
        let mut first_clamp = None;
        for step in 0..=params.n {
            if step > 0 {
                y = self.rk4_step(&y, params);
                let lo = DEPTH_MARGIN;
                let hi = c.h - DEPTH_MARGIN;
                if y[4] < lo || y[4] > hi {
                    y[4] = y[4].clamp(lo, hi);
                    clamps += 1;
                    first_clamp.get_or_insert(step);
                }
            }
            let (s_low, s_deep) = self.salinities(&y);
            let m_n = self.overturning(y[0], s_low, y[4], params.epsilon);
            if let Some(detail) = check_state(&y, s_low, s_deep, m_n) {
                return Err(BoxModelError::NumericalBlowup { step, detail });
            }
            out.m_n.push(m_n);
            out.s_north.push(y[0]);
            out.s_south.push(y[1]);
            out.s_low.push(s_low);
            out.s_deep.push(s_deep);
            out.d_low.push(y[4]);
        }
        if let Some(first) = first_clamp {
            out.warnings.push(format!(
                "D_low clamped to [{}, {}] m on {clamps} step(s), first at step {first}",
                DEPTH_MARGIN,
                c.h - DEPTH_MARGIN
            ));
        }
        Ok(out)
    }
}

fn check_state(y: &State, s_low: f64, s_deep: f64, m_n: f64) -> Option<String> {
    let named = [
        ("S_north", y[0]),
        ("S_south", y[1]),
        ("S_low", s_low),
        ("S_deep", s_deep),
    ];
    for (name, s) in named {
        if !s.is_finite() {
            return Some(format!("{name} is not finite"));
        }
        if !(0.0..=50.0).contains(&s) {
            return Some(format!("{name} = {s} left [0, 50] psu"));
        }
    }
    if !y[4].is_finite() || !m_n.is_finite() {
        return Some("D_low or M_n is not finite".into());
    }
    None
}

/// Runs with the built-in constants.
pub fn run(params: &BoxModelParams) -> Result<RunOutput, BoxModelError> {
    Simulator::default().run(params)
}

impl fmt::Display for BoxModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Fwn={} Fws={} M_ek={} D_low0={} epsilon={} N={} dt={}",
            self.fwn, self.fws, self.m_ek, self.d_low0, self.epsilon, self.n, self.dt
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_pure() {
        let p = default_params();
        assert_eq!(p, default_params());
        assert_eq!(p.m_ek, 2.5e7);
        assert_eq!(p.d_low0, 400.0);
        assert_eq!(p.n, 4000);
    }

    #[test]
    fn density_closed_form() {
        let c = Constants::default();
        assert_eq!(c.density(0.0, 0.0), c.rho0);
        let d = c.density(5.0, 36.0) - c.density(5.0, 35.0);
        assert!((d - c.rho0 * c.beta_s).abs() < 1e-9);
        // 1027 * (1 - 2e-4*5 + 8e-4*35) = 1027 * 1.027
        assert!((c.density(5.0, 35.0) - 1054.729).abs() < 1e-9);
    }

    #[test]
    fn initial_overturning_matches_hand_value() {
        // K_n * ((alpha_T*15) - beta_S*1) * 400^2 / 1.2e-4
        let expected = 4.9 * (2e-4 * 15.0 - 8e-4 * 1.0) * 160_000.0 / 1.2e-4;
        let out = run(&default_params()).unwrap();
        assert!((out.m_n[0] - expected).abs() / expected < 1e-12);
        assert!((out.m_n[0] - 1.4373e7).abs() < 1e3);
    }

    #[test]
    fn series_lengths() {
        let p = BoxModelParams {
            n: 17,
            ..default_params()
        };
        let out = run(&p).unwrap();
        for s in [
            &out.m_n,
            &out.s_north,
            &out.s_south,
            &out.s_low,
            &out.s_deep,
            &out.t_low,
            &out.d_low,
        ] {
            assert_eq!(s.len(), 18);
        }
        assert!(out.t_low.iter().all(|&t| t == 20.0));
    }

    #[test]
    fn rejects_invalid_params() {
        let c = Constants::default();
        let cases = [
            BoxModelParams {
                n: 0,
                ..default_params()
            },
            BoxModelParams {
                dt: 0.0,
                ..default_params()
            },
            BoxModelParams {
                d_low0: 4000.0,
                ..default_params()
            },
            BoxModelParams {
                epsilon: -1e-4,
                ..default_params()
            },
            BoxModelParams {
                m_ek: -1.0,
                ..default_params()
            },
            BoxModelParams {
                fwn: f64::NAN,
                ..default_params()
            },
            BoxModelParams {
                n: MAX_STEPS + 1,
                ..default_params()
            },
        ];
        for p in cases {
            assert!(
                matches!(p.validate(&c), Err(BoxModelError::InvalidParams(_))),
                "{p}"
            );
        }
    }

    #[test]
    fn huge_step_blows_up() {
        let p = BoxModelParams {
            dt: 1e12,
            n: 50,
            ..default_params()
        };
        assert!(matches!(
            run(&p),
            Err(BoxModelError::NumericalBlowup { .. })
        ));
    }

    #[test]
    fn constants_file_overrides() {
        let c = Constants::parse_kv("# comment\nK_n = 3.5\n\nT_low=18 # warm\n").unwrap();
        assert_eq!(c.k_n, 3.5);
        assert_eq!(c.t_low, 18.0);
        assert_eq!(c.v_n, Constants::default().v_n);
        assert!(matches!(
            Constants::parse_kv("Q = 1"),
            Err(ConstantsError::UnknownKey(_))
        ));
        assert!(matches!(
            Constants::parse_kv("K_n 1"),
            Err(ConstantsError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            Constants::parse_kv("S_n0 = 60"),
            Err(ConstantsError::Invalid { .. })
        ));
        let back = Constants::parse_kv(&Constants::default().to_kv()).unwrap();
        assert_eq!(back, Constants::default());
    }

    #[test]
    fn depth_clamp_warns() {
        // Strong eddy return with no Ekman inflow and weak upwelling drains the low box.
        let c = Constants {
            k_gm: 5e6,
            k_v: 1e-9,
            ..Constants::default()
        };
        let p = BoxModelParams {
            d_low0: 20.0,
            m_ek: 0.0,
            n: 200,
            ..default_params()
        };
        let out = Simulator::new(c).run(&p).unwrap();
        assert!(out.d_low.iter().all(|&d| d >= DEPTH_MARGIN));
        assert_eq!(out.warnings.len(), 1, "{:?}", out.warnings);
    }
}
