//! Layout → latent sample → decoded poster with text.

use image::RgbImage;
use serde_json::json;

use regionpost_agents::design_loop::SynthesisError;
use regionpost_agents::{PosterImage, PosterSynthesizer, Theme};
use regionpost_core::geometry::RegionSet;
use regionpost_core::layout::LayoutSpec;
use regionpost_core::latent::LatentGrid;
use regionpost_core::render::{encode_png, toy_decode};
use regionpost_core::sampler::{run_sampler, RegionConditions, SamplerConfig, SamplerTrace};
use regionpost_core::toy::AnalyticSpec;
use regionpost_core::velocity::RemoteVelocityModel;

use crate::overlay::{render_text_overlay, TextOverlayPlan};

pub enum Backend {
    Analytic(AnalyticSpec),
    Remote(RemoteVelocityModel),
}

#[derive(Debug, Clone)]
pub struct Poster {
    pub png: Vec<u8>,
    pub image: RgbImage,
    pub trace: SamplerTrace,
    pub plan: TextOverlayPlan,
}

impl PosterImage for Poster {
    fn png(&self) -> &[u8] {
        &self.png
    }
}

pub struct Synth<'a> {
    pub latent_rs: &'a RegionSet,
    pub width: u32,
    pub height: u32,
    pub backend: &'a Backend,
    pub sampler: SamplerConfig,
}

impl Synth<'_> {
    fn sample(&self, layout: &LayoutSpec) -> Result<(LatentGrid, SamplerTrace), SynthesisError> {
        let conds = RegionConditions::from_layout(layout, self.latent_rs)?;
        Ok(match self.backend {
            Backend::Analytic(spec) => {
                let model = spec.build_for_layout(layout, self.latent_rs)?;
                run_sampler(self.latent_rs, &conds, &model, &self.sampler)?
            }
            Backend::Remote(model) => run_sampler(self.latent_rs, &conds, model, &self.sampler)?,
        })
    }

    fn decode(&self, z: &LatentGrid, trace: &mut SamplerTrace) -> Result<RgbImage, SynthesisError> {
        match self.backend {
            Backend::Analytic(_) => {
                let (img, map) = toy_decode(z, self.width as usize, self.height as usize);
                trace.header.insert("affine_map".into(), serde_json::to_value(map)?);
                Ok(img)
            }
            Backend::Remote(model) => {
                let png = model.decode_png(z)?;
                let img = image::load_from_memory(&png)?.to_rgb8();
                if img.dimensions() != (self.width, self.height) {
                    return Err(format!(
                        "backend decoded {}x{}, mask is {}x{}",
                        img.width(),
                        img.height(),
                        self.width,
                        self.height
                    )
                    .into());
                }
                Ok(img)
            }
        }
    }
}

impl PosterSynthesizer for Synth<'_> {
    type Output = Poster;

    fn synthesize(&mut self, layout: &LayoutSpec, _theme: &Theme, iteration: usize) -> Result<Poster, SynthesisError> {
        let (z, mut trace) = self.sample(layout)?;
        trace.header.insert("iteration".into(), json!(iteration));
        trace.header.insert("seed".into(), json!(self.sampler.seed));
        trace.header.insert("latent_shape".into(), json!(z.shape().as_array()));
        let base = self.decode(&z, &mut trace)?;
        let plan = TextOverlayPlan::from_layout(layout, &base);
        let image = render_text_overlay(&base, &plan);
        let png = encode_png(&image)?;
        Ok(Poster {
            png,
            image,
            trace,
            plan,
        })
    }
}
