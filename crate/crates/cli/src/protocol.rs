use clap::Args;
use serde::{Deserialize, Serialize};

use nvspec::protocol::{self as proto, EmitterParams, ProtocolTiming};
use nvspec::units::{KHZ, MHZ, MS, NS, NW, US, UW};

use crate::config::List;
use crate::error::CliError;
use crate::Ctx;

pub const COMMAND: &str = "protocol";

#[derive(Debug, Args, Serialize)]
pub struct Flags {
    /// Purcell factors, e.g. 1..30.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub purcell: Option<List>,
    /// Allowed fractional broadening(s), e.g. 0.01.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<List>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linewidth_mhz: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lifetime_ns: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_sat_nw: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_pi_ns: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_separation_us: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_spec_ctrl_ms: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_init_ms: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_ion_ms: Option<f64>,
    /// Diffusion rate under pulsed driving.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sdr_mhz_per_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_ref_s: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    pub purcell: List,
    pub p: List,
    pub linewidth_mhz: f64,
    pub lifetime_ns: f64,
    pub p_sat_nw: f64,
    pub t_pi_ns: f64,
    pub pulse_separation_us: f64,
    pub t_spec_ctrl_ms: f64,
    pub t_init_ms: f64,
    pub t_ion_ms: f64,
    pub sdr_mhz_per_s: f64,
    pub tau_ref_s: f64,
}

impl Default for Params {
    fn default() -> Self {
        let e = EmitterParams::default();
        let t = ProtocolTiming::default();
        Self {
            purcell: List(vec![3.0]),
            p: List(vec![t.p_broadening]),
            linewidth_mhz: e.natural_linewidth / MHZ,
            lifetime_ns: e.lifetime / NS,
            p_sat_nw: e.p_sat / NW,
            t_pi_ns: t.t_pi / NS,
            pulse_separation_us: t.pulse_separation / US,
            t_spec_ctrl_ms: t.t_spec_ctrl / MS,
            t_init_ms: t.t_init / MS,
            t_ion_ms: t.t_ion / MS,
            sdr_mhz_per_s: t.sdr_pulse / MHZ,
            tau_ref_s: t.tau_ref,
        }
    }
}

#[derive(Debug, Serialize)]
struct Results {
    #[serde(rename = "pi_pulse_power_uW")]
    pi_pulse_power_uw: f64,
    #[serde(rename = "rate_ceiling_kHz")]
    rate_ceiling_khz: f64,
    /// The first (F, p) pair.
    t_p_s: f64,
    n_p: u64,
    n_ion: f64,
    #[serde(rename = "rate_kHz")]
    rate_khz: f64,
    rows: usize,
}

pub fn run(ctx: &mut Ctx, flags: &Flags) -> Result<(), CliError> {
    let p: Params = crate::config::resolve(COMMAND, &ctx.config, flags)?;
    if p.purcell.0.is_empty() || p.p.0.is_empty() {
        return Err(CliError::Input("purcell and p lists must be non-empty".into()));
    }
    let e = EmitterParams {
        natural_linewidth: p.linewidth_mhz * MHZ,
        lifetime: p.lifetime_ns * NS,
        p_sat: p.p_sat_nw * NW,
        purcell: 1.0,
    };
    let t = ProtocolTiming {
        t_pi: p.t_pi_ns * NS,
        pulse_separation: p.pulse_separation_us * US,
        t_spec_ctrl: p.t_spec_ctrl_ms * MS,
        t_init: p.t_init_ms * MS,
        t_ion: p.t_ion_ms * MS,
        sdr_pulse: p.sdr_mhz_per_s * MHZ,
        tau_ref: p.tau_ref_s,
        p_broadening: p.p.0[0],
    };
    let rows = proto::purcell_sweep(&e, &t, &p.purcell.0, &p.p.0)?;
    ctx.out.table("protocol", |w| proto::write_sweep(w, &rows))?;
    let first = rows[0];
    let results = Results {
        pi_pulse_power_uw: proto::pi_pulse_power(&e, t.t_pi)? / UW,
        rate_ceiling_khz: proto::rate_ceiling(&t) / KHZ,
        t_p_s: first.t_p,
        n_p: first.n_p,
        n_ion: first.n_ion,
        rate_khz: first.rate / KHZ,
        rows: rows.len(),
    };
    ctx.out.manifest(COMMAND, ctx.seed, &p, &results)
}
