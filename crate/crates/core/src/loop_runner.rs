//! Deterministic closed-loop scheduler.
//!
//! Each sample period runs
//!
//! ```text
//! plant → sense → amplify → ADC → correction → PID → encode
//!       → link → decode → DAC → power amp → plant
//! ```
//!
//! The sample module and the coil control module are separate stages that
//! only communicate through encoded frames. A frame built from the
//! measurement at step `k` reaches the actuator at step
//! `k + ceil(link_latency / dt) + 1`; until then, and whenever a frame is
//! lost, the DAC holds its previous code.

use std::collections::{BTreeMap, VecDeque};
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correction::{
    correct, correct_fixed, CorrectionParams, FixedCorrector, MatrixParams, MutualMatrix,
};
use crate::error::{Error, Result};
use crate::link::{encode_frame, Delivery, FrameDecoder, Link, LinkModel, FRAME_LEN};
use crate::pid::{pid_step, pid_step_fixed, FixedPidGains, FixedPidState, PidGains, PidState};
use crate::plant::{sense, Disturbance, PlantParams, PlantState, PlantStepper};
use crate::signal_model::{
    adc_dequantize, adc_quantize, adc_quantize_vector, add_noise, amplify, dac_code_to_voltage,
    power_amp, voltage_to_dac_code, AdcConfig, ChannelVector, DacConfig, Unit, CHANNELS,
};
use crate::trace::{Trace, TraceRecord, OVF_CORRECTION, OVF_PID};

/// Which arithmetic the sample module uses for correction and PID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Arithmetic {
    Float,
    #[default]
    Fixed,
    /// Runs both datapaths on identical inputs.
    Both,
}

impl Arithmetic {
    pub fn as_str(self) -> &'static str {
        match self {
            Arithmetic::Float => "float",
            Arithmetic::Fixed => "fixed",
            Arithmetic::Both => "both",
        }
    }
}

impl std::str::FromStr for Arithmetic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" => Ok(Arithmetic::Float),
            "fixed" => Ok(Arithmetic::Fixed),
            "both" => Ok(Arithmetic::Both),
            other => Err(Error::config(
                "mode",
                format!("expected float, fixed or both, got `{other}`"),
            )),
        }
    }
}

/// A single datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datapath {
    Float,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub resistance: [f64; CHANNELS],
    pub sense_gain: f64,
    pub disturbance: Disturbance,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let p = PlantParams::default();
        Self {
            resistance: p.resistance,
            sense_gain: p.sense_gain,
            disturbance: p.disturbance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// Sample period, seconds.
    pub dt: f64,
    pub n_steps: usize,
    pub adc: AdcConfig,
    pub dac: DacConfig,
    pub matrix: MatrixParams,
    pub correction: CorrectionParams,
    /// Global gains. Their `dt` is ignored in favour of the loop `dt`.
    pub gains: PidGains,
    /// Per-channel gain overrides.
    pub channel_gains: BTreeMap<usize, PidGains>,
    pub plant: PlantConfig,
    /// Link parameters. `drop_seed` is derived from `seed` by the runner.
    pub link: LinkModel,
    pub mode: Arithmetic,
    pub seed: u64,
    /// p99 budget for the digital pipeline, seconds.
    pub latency_budget: f64,
    pub latency_iterations: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        let matrix = MatrixParams::default();
        let dac = DacConfig::default();
        let m = MutualMatrix::default();
        Self {
            dt: 1e-5,
            n_steps: 2000,
            adc: AdcConfig::default(),
            dac,
            matrix,
            correction: CorrectionParams::for_matrix(&m, dac.amp_gain_v),
            gains: PidGains::default(),
            channel_gains: BTreeMap::new(),
            plant: PlantConfig::default(),
            link: LinkModel::default(),
            mode: Arithmetic::Fixed,
            seed: 0,
            latency_budget: 1e-5,
            latency_iterations: 100_000,
        }
    }
}

const NOISE_STREAM: u64 = 0;
const LINK_SEED_SALT: u64 = 0x6c69_6e6b_5f64_726f;

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "must be finite and > 0"));
        }
        if self.n_steps < 1 {
            return Err(Error::config("n_steps", "must be >= 1"));
        }
        self.adc.validate()?;
        self.dac.validate()?;
        MutualMatrix::from_params(self.matrix, CHANNELS)
            .map_err(|e| Error::config("correction.diag", e.to_string()))?;
        self.correction.validate()?;
        for ch in self.channel_gains.keys() {
            if *ch >= CHANNELS {
                return Err(Error::config(
                    format!("pid.ch{ch}"),
                    "channel index must be < 16",
                ));
            }
        }
        for g in self.all_gains() {
            g.validate()?;
        }
        self.plant_params()?.validate()?;
        self.link_model().validate()?;
        if !(self.latency_budget.is_finite() && self.latency_budget > 0.0) {
            return Err(Error::config("latency.budget", "must be finite and > 0"));
        }
        if self.latency_iterations < 1 {
            return Err(Error::config("latency.iterations", "must be >= 1"));
        }
        if self.mode != Arithmetic::Float {
            let m = self.mutual_matrix()?;
            FixedCorrector::new(&m, &self.correction, self.adc.lsb())?;
            for g in self.all_gains() {
                FixedPidGains::new(&g, self.adc.lsb())?;
            }
        }
        Ok(())
    }

    pub fn mutual_matrix(&self) -> Result<MutualMatrix> {
        MutualMatrix::from_params(self.matrix, CHANNELS)
    }

    pub fn plant_params(&self) -> Result<PlantParams> {
        Ok(PlantParams {
            resistance: self.plant.resistance,
            inductance: self.mutual_matrix()?,
            sense_gain: self.plant.sense_gain,
            disturbance: self.plant.disturbance.clone(),
        })
    }

    pub fn link_model(&self) -> LinkModel {
        LinkModel {
            drop_seed: self.seed ^ LINK_SEED_SALT,
            ..self.link
        }
    }

    /// Gains for channel `ch`, with the loop sample period.
    pub fn channel_gain(&self, ch: usize) -> PidGains {
        let g = self.channel_gains.get(&ch).copied().unwrap_or(self.gains);
        PidGains { dt: self.dt, ..g }
    }

    pub fn all_gains(&self) -> [PidGains; CHANNELS] {
        std::array::from_fn(|ch| self.channel_gain(ch))
    }

    /// Steps between a measurement and the actuation it produces.
    pub fn loop_delay_steps(&self) -> usize {
        let ratio = self.link_model().latency() / self.dt;
        // Tolerate representation error when the latency is an exact
        // multiple of dt.
        (ratio - 1e-9).ceil().max(0.0) as usize + 1
    }
}

/// What the sample module hands to the link for one step.
#[derive(Debug, Clone, Copy)]
struct SampleOutput {
    coil_volts: ChannelVector,
    adc_codes: [i16; CHANNELS],
    corrected: [f64; CHANNELS],
    pid_out: [f64; CHANNELS],
    payload: [i16; CHANNELS],
    ovf: u8,
}

/// Corrected signal, PID output, payload words, overflow bits.
type Computed = ([f64; CHANNELS], [f64; CHANNELS], [i16; CHANNELS], u8);

enum Controllers {
    Float {
        gains: [PidGains; CHANNELS],
        states: [PidState; CHANNELS],
    },
    Fixed {
        corrector: FixedCorrector,
        gains: [FixedPidGains; CHANNELS],
        states: [FixedPidState; CHANNELS],
    },
}

/// Acquisition, correction and control board.
struct SampleModule {
    adc: AdcConfig,
    matrix: MutualMatrix,
    params: CorrectionParams,
    controllers: Controllers,
    noise: ChaCha8Rng,
}

impl SampleModule {
    fn new(cfg: &LoopConfig, path: Datapath) -> Result<Self> {
        let matrix = cfg.mutual_matrix()?;
        let gains = cfg.all_gains();
        let controllers = match path {
            Datapath::Float => Controllers::Float {
                gains,
                states: [PidState::default(); CHANNELS],
            },
            Datapath::Fixed => {
                let lsb = cfg.adc.lsb();
                let mut fixed = [FixedPidGains::new(&gains[0], lsb)?; CHANNELS];
                for (f, g) in fixed.iter_mut().zip(&gains) {
                    *f = FixedPidGains::new(g, lsb)?;
                }
                Controllers::Fixed {
                    corrector: FixedCorrector::new(&matrix, &cfg.correction, lsb)?,
                    gains: fixed,
                    states: [FixedPidState::default(); CHANNELS],
                }
            }
        };
        let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise.set_stream(NOISE_STREAM);
        Ok(Self {
            adc: cfg.adc,
            matrix,
            params: cfg.correction,
            controllers,
            noise,
        })
    }

    fn acquire(&mut self, coil_volts: &ChannelVector) -> Result<[i16; CHANNELS]> {
        let amplified = amplify(coil_volts, &self.adc)?;
        let noisy = add_noise(&amplified, self.adc.noise_std, &mut self.noise)?;
        Ok(adc_quantize_vector(&noisy, &self.adc))
    }

    /// Digital section: correction, PID, and the outgoing payload words.
    fn compute(&mut self, codes: &[i16; CHANNELS]) -> Result<Computed> {
        let lsb = self.adc.lsb();
        match &mut self.controllers {
            Controllers::Float { gains, states } => {
                let u_in =
                    ChannelVector::new(codes.map(|c| adc_dequantize(c, &self.adc)), Unit::Volts)?;
                let corrected = correct(&u_in, &self.matrix, &self.params)?;
                let mut pid_out = [0.0; CHANNELS];
                for ch in 0..CHANNELS {
                    let (u, next) = pid_step(&states[ch], -corrected[ch], &gains[ch])?;
                    states[ch] = next;
                    pid_out[ch] = u;
                }
                let payload = pid_out.map(|u| adc_quantize(u, &self.adc));
                Ok((*corrected.values(), pid_out, payload, 0))
            }
            Controllers::Fixed {
                corrector,
                gains,
                states,
            } => {
                let corr = correct_fixed(codes, corrector);
                let mut ovf = if corr.overflow { OVF_CORRECTION } else { 0 };
                let mut payload = [0i16; CHANNELS];
                for ch in 0..CHANNELS {
                    let c = corr.codes[ch];
                    if c == i16::MIN {
                        ovf |= OVF_PID;
                    }
                    let (out, next) = pid_step_fixed(&states[ch], c.saturating_neg(), &gains[ch]);
                    states[ch] = next;
                    if out.overflow {
                        ovf |= OVF_PID;
                    }
                    payload[ch] = out.code;
                }
                let corrected = corr.codes.map(|c| c as f64 * lsb);
                let pid_out = payload.map(|c| c as f64 * lsb);
                Ok((corrected, pid_out, payload, ovf))
            }
        }
    }

    fn process(&mut self, coil_volts: ChannelVector) -> Result<SampleOutput> {
        let adc_codes = self.acquire(&coil_volts)?;
        let (corrected, pid_out, payload, ovf) = self.compute(&adc_codes)?;
        Ok(SampleOutput {
            coil_volts,
            adc_codes,
            corrected,
            pid_out,
            payload,
            ovf,
        })
    }
}

/// Maps a payload word (ADC-scaled volts) to a DAC code.
fn word_to_dac_code(word: i16, adc: &AdcConfig, dac: &DacConfig) -> u16 {
    voltage_to_dac_code(word as f64 * adc.lsb(), dac)
}

/// Coil control board: frame reception, DAC, power amplifier.
struct CoilModule {
    adc: AdcConfig,
    dac: DacConfig,
    decoder: FrameDecoder,
    held: [u16; CHANNELS],
}

impl CoilModule {
    fn new(cfg: &LoopConfig) -> Self {
        Self {
            adc: cfg.adc,
            dac: cfg.dac,
            decoder: FrameDecoder::new(),
            held: [voltage_to_dac_code(0.0, &cfg.dac); CHANNELS],
        }
    }

    fn receive(&mut self, bytes: &[u8; FRAME_LEN]) {
        // Rejected frames leave the previous codes held.
        if let Ok(frame) = self.decoder.receive(bytes) {
            self.held = frame
                .payload
                .map(|w| word_to_dac_code(w, &self.adc, &self.dac));
        }
    }

    fn actuate(&self) -> Result<[f64; CHANNELS]> {
        let mut out = [0.0; CHANNELS];
        for (o, &code) in out.iter_mut().zip(&self.held) {
            *o = power_amp(dac_code_to_voltage(code as u32, &self.dac)?, &self.dac)?;
        }
        Ok(out)
    }
}

/// A hook letting tests perturb the coil voltage seen by the sample module.
pub type MeasurementHook<'a> = &'a mut dyn FnMut(u64, &mut [f64; CHANNELS]);

fn simulate(cfg: &LoopConfig, path: Datapath, mut hook: Option<MeasurementHook>) -> Result<Trace> {
    cfg.validate()?;
    let plant = cfg.plant_params()?;
    let stepper = PlantStepper::new(&plant, cfg.dt)?;
    let mut link = Link::new(cfg.link_model())?;
    let delay = cfg.loop_delay_steps();

    let mut sample = SampleModule::new(cfg, path)?;
    let mut coil = CoilModule::new(cfg);
    let mut in_flight: VecDeque<(usize, [u8; FRAME_LEN])> = VecDeque::new();
    let mut state = PlantState::default();
    let mut records = Vec::with_capacity(cfg.n_steps);

    for k in 0..cfg.n_steps {
        let t = k as f64 * cfg.dt;
        let mut coil_volts = *sense(&state, &plant).values();
        if let Some(h) = hook.as_mut() {
            h(k as u64, &mut coil_volts);
        }
        let out = sample.process(ChannelVector::new(coil_volts, Unit::Volts)?)?;

        let frame = encode_frame(&out.payload, k as u8);
        if let Delivery::Arrives { .. } = link.transmit(&frame, t)? {
            in_flight.push_back((k + delay, frame));
        }
        while let Some((due, bytes)) = in_flight.front() {
            if *due > k {
                break;
            }
            coil.receive(bytes);
            in_flight.pop_front();
        }
        let applied = coil.actuate()?;

        records.push(TraceRecord {
            step: k as u64,
            t,
            currents: state.currents,
            coil_volts: *out.coil_volts.values(),
            adc_codes: out.adc_codes,
            corrected: out.corrected,
            pid_out: out.pid_out,
            dac_codes: coil.held,
            applied,
            frames_lost: coil.decoder.lost,
            ovf: out.ovf,
        });

        state = stepper.step(
            &state,
            &ChannelVector::new(applied, Unit::Volts)?,
            &plant.disturbance,
        )?;
    }
    Ok(Trace { records })
}

/// Runs the configured scenario. In `Both` mode the fixed-point trace is
/// returned; use [`run_both`] for the pair.
pub fn run_closed_loop(cfg: &LoopConfig) -> Result<Trace> {
    let path = match cfg.mode {
        Arithmetic::Float => Datapath::Float,
        Arithmetic::Fixed | Arithmetic::Both => Datapath::Fixed,
    };
    simulate(cfg, path, None)
}

pub fn run_datapath(cfg: &LoopConfig, path: Datapath) -> Result<Trace> {
    simulate(cfg, path, None)
}

/// Fixed and float traces of the same scenario, `(fixed, float)`.
pub fn run_both(cfg: &LoopConfig) -> Result<(Trace, Trace)> {
    Ok((
        simulate(cfg, Datapath::Fixed, None)?,
        simulate(cfg, Datapath::Float, None)?,
    ))
}

/// Like [`run_datapath`], with `hook` invoked on every measurement before it
/// enters the sample module.
pub fn run_with_measurement_hook(
    cfg: &LoopConfig,
    path: Datapath,
    hook: MeasurementHook,
) -> Result<Trace> {
    simulate(cfg, path, Some(hook))
}

/// Unit-step disturbance (1 V from t = 0) on `channel` only.
pub fn step_response_config(cfg: &LoopConfig, channel: usize) -> Result<LoopConfig> {
    if channel >= CHANNELS {
        return Err(Error::domain(format!(
            "channel {channel} out of range 0..{CHANNELS}"
        )));
    }
    let mut amplitude = [0.0; CHANNELS];
    amplitude[channel] = 1.0;
    let mut out = cfg.clone();
    out.plant.disturbance = Disturbance::Step {
        amplitude,
        start: 0.0,
    };
    Ok(out)
}

pub fn run_step_response(cfg: &LoopConfig, channel: usize) -> Result<Trace> {
    run_closed_loop(&step_response_config(cfg, channel)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyReport {
    pub iterations: usize,
    pub mean: f64,
    pub p99: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub budget: f64,
}

impl LatencyReport {
    pub fn within_budget(&self) -> bool {
        self.p99 <= self.budget
    }
}

/// Wall-clock cost of one digital pipeline evaluation (quantize, correct,
/// PID, encode, decode, DAC map) in seconds. `Both` mode measures the fixed
/// datapath.
pub fn measure_pipeline_latency(cfg: &LoopConfig) -> Result<LatencyReport> {
    cfg.validate()?;
    let path = match cfg.mode {
        Arithmetic::Float => Datapath::Float,
        _ => Datapath::Fixed,
    };
    let mut sample = SampleModule::new(cfg, path)?;
    let mut coil = CoilModule::new(cfg);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inputs: Vec<[f64; CHANNELS]> = (0..1024)
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5) * cfg.adc.full_scale))
        .collect();

    let mut samples = Vec::with_capacity(cfg.latency_iterations);
    for k in 0..cfg.latency_iterations {
        let analog = &inputs[k % inputs.len()];
        let start = Instant::now();
        let codes = analog.map(|v| adc_quantize(v, &sample.adc));
        let (_, _, payload, _) = sample.compute(black_box(&codes))?;
        let frame = encode_frame(&payload, k as u8);
        coil.receive(black_box(&frame));
        black_box(&coil.held);
        samples.push(start.elapsed().as_secs_f64());
    }

    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    samples.sort_by(f64::total_cmp);
    let p99_idx = ((0.99 * n).ceil() as usize).clamp(1, samples.len()) - 1;
    Ok(LatencyReport {
        iterations: samples.len(),
        mean,
        p99: samples[p99_idx],
        std_dev: var.sqrt(),
        min: samples[0],
        max: samples[samples.len() - 1],
        budget: cfg.latency_budget,
    })
}
