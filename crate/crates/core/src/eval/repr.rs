use crate::audio_dsp::{log_mel, MelConfig};
use crate::distill::StudentModel;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::teacher::{EncoderConfig, TeacherModel};
use crate::wave::Waveform;

/// A frozen upstream model seen by the probes: anything that maps a waveform
/// to a `[frames, dim]` sequence of last-layer states.
pub trait FrozenModel {
    fn dim(&self) -> usize;
    fn sequence(&self, wave: &Waveform) -> Result<Tensor>;
}

impl FrozenModel for StudentModel {
    fn dim(&self) -> usize {
        self.config.encoder.dim
    }

    fn sequence(&self, wave: &Waveform) -> Result<Tensor> {
        self.represent(wave)
    }
}

impl FrozenModel for TeacherModel {
    fn dim(&self) -> usize {
        TeacherModel::dim(self)
    }

    fn sequence(&self, wave: &Waveform) -> Result<Tensor> {
        self.hidden(wave)?
            .pop()
            .ok_or_else(|| Error::Eval("teacher has no hidden layers".into()))
    }
}

/// Log-mel frames on the encoder's frame grid. A parameter-free reference
/// upstream, used to check that distortions are audible at all.
#[derive(Debug, Clone)]
pub struct LogMelFeatures {
    pub mel: MelConfig,
    pub encoder: EncoderConfig,
}

impl LogMelFeatures {
    pub fn new(encoder: &EncoderConfig, n_mels: usize) -> Self {
        Self {
            mel: MelConfig {
                n_mels,
                hop: encoder.total_stride(),
                centre: encoder.frame_centre(0),
                ..MelConfig::default()
            },
            encoder: encoder.clone(),
        }
    }
}

impl FrozenModel for LogMelFeatures {
    fn dim(&self) -> usize {
        self.mel.n_mels
    }

    fn sequence(&self, wave: &Waveform) -> Result<Tensor> {
        let min = self.encoder.min_samples();
        if wave.len() < min {
            return Err(Error::TooShort { len: wave.len(), min });
        }
        Tensor::from_rows(&log_mel(wave, &self.mel, self.encoder.frames(wave.len())))
    }
}

/// Mean over frames of the model's last-layer states.
pub fn extract_repr<M: FrozenModel + ?Sized>(model: &M, wave: &Waveform) -> Result<Vec<f64>> {
    Ok(time_mean(&model.sequence(wave)?))
}

pub(crate) fn time_mean(seq: &Tensor) -> Vec<f64> {
    let (rows, cols) = (seq.rows(), seq.cols());
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(seq.row_slice(r)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= rows as f64;
    }
    out
}

/// [`extract_repr`] over many waveforms.
pub fn extract_all<'w, M: FrozenModel + ?Sized>(
    model: &M,
    waves: impl IntoIterator<Item = &'w Waveform>,
) -> Result<Vec<Vec<f64>>> {
    waves.into_iter().map(|w| extract_repr(model, w)).collect()
}
