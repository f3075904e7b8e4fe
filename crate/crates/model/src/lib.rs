//! Compact two-stream vision-language encoder with an attached
//! coarse-to-fine program decoder.

mod batch;
mod check;
mod config;
mod decoder;
mod encoder;
mod params;

pub use batch::{BatchLayout, BatchedDecode, BatchedEncoderOutput, SampleInput};
pub use check::param_grad_check;
pub use config::{DecoderConfig, ModelConfig, Tap};
pub use decoder::{DecoderLosses, GruParams, ProgramDecoder, ProgramPrediction};
pub use encoder::{Encoder, EncoderOutput, LayerNorm, Linear, CLS_ROW, UNK_ROW, WORD_OFFSET};
pub use params::{Bound, Init, ParamId, ParamSet};

/// Encoder plus decoder over one shared parameter set.
pub struct VlModel {
    pub params: ParamSet,
    pub encoder: Encoder,
    pub decoder: ProgramDecoder,
}

impl VlModel {
    pub fn new(
        model_config: ModelConfig,
        decoder_config: DecoderConfig,
        stop_index: usize,
        seed: u64,
    ) -> Self {
        let mut params = ParamSet::new();
        let mut init = Init::new(seed);
        let encoder = Encoder::new(model_config.clone(), &mut params, &mut init);
        let decoder = ProgramDecoder::new(
            decoder_config,
            model_config.d_hidden,
            stop_index,
            &mut params,
            &mut init,
        );
        VlModel { params, encoder, decoder }
    }

    pub fn total_parameters(&self) -> usize {
        self.params.total_elements()
    }
}
