use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use crate::dataset::{augment, load_masked_png, normalize, AugmentationConfig, DatasetError, LabeledSample, MaskedImage};
use crate::model::{Sample, SampleSource};
use crate::seed::{derive_seed, rng_from_seed, SeedPart};
use crate::Result;

struct Entry {
    id: String,
    /// How many earlier entries share `id`; keeps oversampled copies on
    /// separate augmentation streams.
    copy: usize,
    label: usize,
    image: Arc<MaskedImage>,
    fixed: Option<Vec<f32>>,
}

/// Manifest samples loaded from section PNGs and normalized to the network
/// input size. With augmentation, each (sample, copy, epoch) gets its own
/// random stream.
pub struct ImageSource {
    entries: Vec<Entry>,
    size: (usize, usize),
    augmentation: Option<(AugmentationConfig, u64)>,
}

impl ImageSource {
    /// `samples` may repeat; image paths are relative to `workdir`.
    pub fn load(
        workdir: &Path,
        samples: &[&LabeledSample],
        size: (usize, usize),
        augmentation: Option<(AugmentationConfig, u64)>,
    ) -> Result<Self> {
        let mut images: HashMap<&str, Arc<MaskedImage>> = HashMap::new();
        let mut copies: HashMap<&str, usize> = HashMap::new();
        let mut entries = Vec::with_capacity(samples.len());
        for s in samples {
            let image = match images.get(s.image.as_str()) {
                Some(img) => img.clone(),
                None => {
                    let img = Arc::new(load_masked_png(&workdir.join(&s.image))?);
                    images.insert(&s.image, img.clone());
                    img
                }
            };
            let copy = copies.entry(&s.sample_id).or_insert(0);
            let fixed = match augmentation {
                Some(_) => None,
                None => Some(normalize(&image, size).map_err(|e| name_sample(e, &s.sample_id))?),
            };
            entries.push(Entry {
                id: s.sample_id.clone(),
                copy: *copy,
                label: s.label.index(),
                image,
                fixed,
            });
            *copy += 1;
        }
        Ok(Self {
            entries,
            size,
            augmentation,
        })
    }
}

fn name_sample(e: DatasetError, id: &str) -> DatasetError {
    match e {
        DatasetError::FullyMasked(_) => DatasetError::FullyMasked(id.to_string()),
        other => other,
    }
}

impl SampleSource for ImageSource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn sample_id(&self, index: usize) -> &str {
        &self.entries[index].id
    }

    fn sample(&self, index: usize, epoch: Option<usize>) -> Result<Sample> {
        let e = &self.entries[index];
        let input = match (&e.fixed, &self.augmentation, epoch) {
            (Some(x), _, _) => x.clone(),
            (None, Some((cfg, seed)), Some(epoch)) => {
                let stream = derive_seed(
                    *seed,
                    &[SeedPart::from(&e.id), SeedPart::from(e.copy), SeedPart::from(epoch)],
                );
                let out = augment(&e.image, cfg, &mut rng_from_seed(stream));
                match normalize(&out, self.size) {
                    Ok(x) => x,
                    // A transform can push every valid pixel out of frame.
                    Err(DatasetError::FullyMasked(_)) => normalize(&e.image, self.size)?,
                    Err(other) => return Err(other.into()),
                }
            }
            (None, _, _) => normalize(&e.image, self.size).map_err(|err| name_sample(err, &e.id))?,
        };
        Ok(Sample {
            input,
            label: e.label,
        })
    }
}
