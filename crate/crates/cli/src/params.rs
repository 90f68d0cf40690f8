//! Per-kind parameter flags for `augment`.

use clap::Args;
use vacode::imgaug::Augmentation;
use vacode::AugKind;

#[derive(Args, Debug, Default)]
pub struct AugParams {
    /// Crop: smallest side fraction.
    #[arg(long)]
    pub crop_min: Option<f64>,
    /// Crop: largest side fraction.
    #[arg(long)]
    pub crop_max: Option<f64>,
    #[arg(long)]
    pub erase_min_area: Option<f64>,
    #[arg(long)]
    pub erase_max_area: Option<f64>,
    #[arg(long)]
    pub erase_min_aspect: Option<f64>,
    #[arg(long)]
    pub erase_max_aspect: Option<f64>,
    #[arg(long)]
    pub sharp_sigma: Option<f64>,
    #[arg(long)]
    pub sharp_strength: Option<f64>,
    /// Noise: diffusion step to sample at.
    #[arg(long)]
    pub noise_step: Option<usize>,
    /// Noise: length of the beta schedule.
    #[arg(long)]
    pub noise_steps: Option<usize>,
}

impl AugParams {
    fn set_flags(&self) -> Vec<(&'static str, AugKind)> {
        let mut out = Vec::new();
        let mut note = |set: bool, name, kind| {
            if set {
                out.push((name, kind));
            }
        };
        note(self.crop_min.is_some(), "--crop-min", AugKind::Crop);
        note(self.crop_max.is_some(), "--crop-max", AugKind::Crop);
        note(
            self.erase_min_area.is_some(),
            "--erase-min-area",
            AugKind::Erase,
        );
        note(
            self.erase_max_area.is_some(),
            "--erase-max-area",
            AugKind::Erase,
        );
        note(
            self.erase_min_aspect.is_some(),
            "--erase-min-aspect",
            AugKind::Erase,
        );
        note(
            self.erase_max_aspect.is_some(),
            "--erase-max-aspect",
            AugKind::Erase,
        );
        note(self.sharp_sigma.is_some(), "--sharp-sigma", AugKind::Sharp);
        note(
            self.sharp_strength.is_some(),
            "--sharp-strength",
            AugKind::Sharp,
        );
        note(self.noise_step.is_some(), "--noise-step", AugKind::Noise);
        note(self.noise_steps.is_some(), "--noise-steps", AugKind::Noise);
        out
    }

    /// Defaults for `kind` with any given flags applied.
    pub fn build(&self, kind: AugKind) -> Result<Augmentation, String> {
        if let Some((flag, k)) = self.set_flags().into_iter().find(|(_, k)| *k != kind) {
            return Err(format!("{flag} only applies to --kind {k}"));
        }
        let mut aug = Augmentation::default_for(kind);
        match &mut aug {
            Augmentation::Crop { min_frac, max_frac } => {
                *min_frac = self.crop_min.unwrap_or(*min_frac);
                *max_frac = self.crop_max.unwrap_or(*max_frac);
            }
            Augmentation::Erase {
                min_area,
                max_area,
                min_aspect,
                max_aspect,
                ..
            } => {
                *min_area = self.erase_min_area.unwrap_or(*min_area);
                *max_area = self.erase_max_area.unwrap_or(*max_area);
                *min_aspect = self.erase_min_aspect.unwrap_or(*min_aspect);
                *max_aspect = self.erase_max_aspect.unwrap_or(*max_aspect);
            }
            Augmentation::Sharp { sigma, strength } => {
                *sigma = self.sharp_sigma.unwrap_or(*sigma);
                *strength = self.sharp_strength.unwrap_or(*strength);
            }
            Augmentation::Noise {
                num_steps, step, ..
            } => {
                *num_steps = self.noise_steps.unwrap_or(*num_steps);
                *step = self.noise_step.unwrap_or(*step);
            }
            _ => {}
        }
        aug.validate().map_err(|e| e.to_string())?;
        Ok(aug)
    }
}
