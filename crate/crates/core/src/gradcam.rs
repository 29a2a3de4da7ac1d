//! Grad-CAM heatmaps over the classifier's last convolutional feature map.

use nanet_tensor::kernels::bilinear_resize;
use nanet_tensor::Graph;

use crate::checkpoint::Checkpoint;
use crate::eval::argmax;
use crate::image::ImageBuffer;
use crate::morse::NUM_LETTERS;
use crate::train::{prepare, stack};
use crate::{rng, Error, Result};

/// Heatmap for `target` (default: the predicted class), same size as `image`,
/// min-max normalized to `[0, 1]`. A map that is zero everywhere stays zero.
pub fn grad_cam(ckpt: &Checkpoint, image: &ImageBuffer, target: Option<usize>) -> Result<ImageBuffer> {
    if let Some(t) = target.filter(|&t| t >= NUM_LETTERS) {
        return Err(Error::InvalidConfig(format!("target class {t} out of range")));
    }
    let params = &ckpt.params;
    let input = stack(&[prepare(image, ckpt.config.image_size)?])?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, |_| false);
    // a differentiable input makes every downstream node carry a gradient
    let x = g.variable(input);
    let mut unused = rng::stream(0, &[]);
    let nodes = crate::model::nanet_graph(&mut g, &bound, params, x, ckpt.config.mode, false, &mut unused)?;
    let logits = g.value(nodes.logits).data().to_vec();
    let target = target.unwrap_or_else(|| argmax(&logits));
    let mut seed = vec![0.0f32; logits.len()];
    seed[target] = 1.0;
    g.backward_from(nodes.logits, seed)?;

    let [_, c, h, w] = g.value(nodes.features).dims4()?;
    let features = g.value(nodes.features).data();
    let grads = g.grad_or_zeros(nodes.features);
    let plane = h * w;
    let mut cam = vec![0.0f32; plane];
    for k in 0..c {
        let gk = &grads[k * plane..(k + 1) * plane];
        let weight = gk.iter().sum::<f32>() / plane as f32;
        if weight == 0.0 {
            continue;
        }
        for (v, &a) in cam.iter_mut().zip(&features[k * plane..(k + 1) * plane]) {
            *v += weight * a;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let mut up = bilinear_resize(&cam, h, w, image.height(), image.width());
    normalize(&mut up);
    ImageBuffer::new(image.height(), image.width(), up)
}

/// Min-max scale into `[0, 1]`. All-zero input stays zero; any other
/// constant map becomes all ones.
fn normalize(values: &mut [f32]) {
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= 0.0 {
        values.fill(0.0);
    } else if hi == lo {
        values.fill(1.0);
    } else {
        for v in values {
            *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
    }
}
