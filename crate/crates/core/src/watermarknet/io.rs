use std::path::Path;

use super::{build_model, WatermarkConfig, WatermarkError, WatermarkModel};
use crate::tensorgrad::{ParamSet, Tensor};
use crate::weights::{Container, WeightsError};

pub const MAGIC: &[u8; 4] = b"WMF1";

fn stats_names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

impl WatermarkModel {
    fn stat_layer_names(&self) -> (Vec<String>, Vec<String>) {
        let enc = stats_names("enc.block", self.config.encoder_blocks);
        let mut dec = stats_names("dec.block", self.config.decoder_blocks);
        dec.push("dec.msgblock".into());
        (enc, dec)
    }

    pub(crate) fn to_container(&self) -> Result<Container, WatermarkError> {
        let cfg = &self.config;
        let mut c = Container::new();
        c.set("config.msg_len", cfg.msg_len);
        c.set("config.base_channels", cfg.base_channels);
        c.set("config.encoder_blocks", cfg.encoder_blocks);
        c.set("config.decoder_blocks", cfg.decoder_blocks);
        c.set("config.image_channels", cfg.image_channels);
        c.set("config.output", cfg.output);
        c.set("step", self.step);
        for (name, p) in self.encoder.iter().chain(self.decoder.iter()) {
            c.push(name, p.value.clone());
        }
        let (enc, dec) = self.stat_layer_names();
        for (name, s) in enc.iter().zip(&self.enc_stats).chain(dec.iter().zip(&self.dec_stats)) {
            c.push(format!("{name}.bn.running_mean"), Tensor::new(vec![s.mean.len()], s.mean.clone())?);
            c.push(format!("{name}.bn.running_var"), Tensor::new(vec![s.var.len()], s.var.clone())?);
        }
        Ok(c)
    }

    pub(crate) fn from_container(mut c: Container) -> Result<Self, WatermarkError> {
        let config = WatermarkConfig {
            msg_len: c.field("config.msg_len")?,
            base_channels: c.field("config.base_channels")?,
            encoder_blocks: c.field("config.encoder_blocks")?,
            decoder_blocks: c.field("config.decoder_blocks")?,
            image_channels: c.field("config.image_channels")?,
            output: c.field::<String>("config.output")?.parse()?,
        };
        let mut model = build_model(config, 0)?;
        model.step = c.field("step")?;
        let mut idx = 0;
        fill(&mut model.encoder, &mut c, &mut idx)?;
        fill(&mut model.decoder, &mut c, &mut idx)?;
        let (enc, dec) = model.stat_layer_names();
        for (name, s) in enc.iter().zip(&mut model.enc_stats).chain(dec.iter().zip(&mut model.dec_stats)) {
            let ch = s.mean.len();
            s.mean = c.take(&mut idx, &format!("{name}.bn.running_mean"), &[ch])?.into_data();
            s.var = c.take(&mut idx, &format!("{name}.bn.running_var"), &[ch])?.into_data();
        }
        if idx != c.tensors.len() {
            return Err(WeightsError::Field {
                field: c.tensors[idx].0.clone(),
                reason: "unexpected extra tensor".into(),
            }
            .into());
        }
        Ok(model)
    }
}

fn fill(params: &mut ParamSet, c: &mut Container, idx: &mut usize) -> Result<(), WatermarkError> {
    let names: Vec<(String, Vec<usize>)> = params.iter().map(|(n, p)| (n.to_string(), p.value.shape().to_vec())).collect();
    for (name, shape) in names {
        *params.get_mut(&name)? = c.take(idx, &name, &shape)?;
    }
    Ok(())
}

pub fn save_model(model: &WatermarkModel, path: &Path) -> Result<(), WatermarkError> {
    Ok(model.to_container()?.save(path, MAGIC)?)
}

pub fn load_model(path: &Path) -> Result<WatermarkModel, WatermarkError> {
    WatermarkModel::from_container(Container::load(path, MAGIC)?)
}
