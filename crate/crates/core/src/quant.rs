//! Symmetric per-tensor int8 weight quantization.

use crate::error::{Error, Result};
use crate::graph::{shared, LayerKind, ModelGraph, Node};
use crate::tensor::Tensor;
use crate::train::{evaluate, Sample};

const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub scale: f64,
    pub values: Vec<i8>,
}

impl QuantizedTensor {
    pub fn new(shape: Vec<usize>, scale: f64, values: Vec<i8>) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("quantization scale {scale} must be positive")));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Shape(format!("{} int8 values for shape {shape:?}", values.len())));
        }
        Ok(Self { shape, scale, values })
    }

    pub fn dequantize(&self) -> Tensor {
        let data = self.values.iter().map(|&q| q as f64 * self.scale).collect();
        Tensor::new(self.shape.clone(), data).expect("validated shape")
    }
}

/// `scale = max|t| / 127` (floored), values rounded half-to-even and clamped
/// to `[-127, 127]`.
pub fn quantize_tensor(t: &Tensor) -> Result<QuantizedTensor> {
    if !t.is_finite() {
        return Err(Error::NonFinite("tensor to quantize".into()));
    }
    let scale = (t.max_abs() / 127.0).max(SCALE_FLOOR);
    let values = t
        .data()
        .iter()
        .map(|&x| (x / scale).round_ties_even().clamp(-127.0, 127.0) as i8)
        .collect();
    QuantizedTensor::new(t.shape().to_vec(), scale, values)
}

pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    q.dequantize()
}

/// Which parameters of a layer are weights (quantized) rather than biases or
/// normalization statistics (kept in f64).
pub fn weight_mask(kind: &LayerKind) -> Vec<bool> {
    match kind {
        LayerKind::Conv2d { .. } | LayerKind::Dense { .. } => vec![true, false],
        LayerKind::Lstm { .. } => vec![true, true, false],
        LayerKind::Eca { .. } => vec![true],
        LayerKind::Dsc { .. } => vec![true, false, true, false],
        other => vec![false; other.param_shapes().len()],
    }
}

/// A graph whose weights have been replaced by their dequantized int8
/// values, together with the int8 form for serialization (`[node][param]`).
#[derive(Debug)]
pub struct QuantizedModel {
    pub graph: ModelGraph,
    pub tensors: Vec<Vec<Option<QuantizedTensor>>>,
}

/// Quantizes every owned weight tensor. Aliased layers keep their handles;
/// use [`ModelGraph::rebase`] to point them at a quantized base.
pub fn quantize_model(graph: &ModelGraph) -> Result<QuantizedModel> {
    let mut nodes = Vec::with_capacity(graph.nodes().len());
    let mut tensors = Vec::with_capacity(graph.nodes().len());
    for n in graph.nodes() {
        if n.is_frozen() {
            nodes.push(n.clone());
            tensors.push(vec![None; n.params.len()]);
            continue;
        }
        let mut params = Vec::with_capacity(n.params.len());
        let mut qs = Vec::with_capacity(n.params.len());
        for (p, is_weight) in n.params.iter().zip(weight_mask(&n.kind)) {
            let t = p.read();
            if is_weight {
                let q = quantize_tensor(&t)?;
                params.push(shared(q.dequantize()));
                qs.push(Some(q));
            } else {
                params.push(shared(t.clone()));
                qs.push(None);
            }
        }
        nodes.push(Node { params, ..n.clone() });
        tensors.push(qs);
    }
    Ok(QuantizedModel { graph: ModelGraph::from_nodes(nodes)?, tensors })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantReport {
    pub float_bytes: usize,
    pub int8_bytes: usize,
    pub float_accuracy: f64,
    pub int8_accuracy: f64,
    /// Fraction of samples whose predicted class is unchanged.
    pub argmax_agreement: f64,
}

impl QuantReport {
    pub fn size_ratio(&self) -> f64 {
        self.int8_bytes as f64 / self.float_bytes as f64
    }

    pub fn accuracy_drop_pp(&self) -> f64 {
        100.0 * (self.float_accuracy - self.int8_accuracy)
    }

    pub fn to_text(&self) -> String {
        format!(
            "float64 size: {} bytes\nint8 size: {} bytes ({:.3}x)\nfloat accuracy: {:.4}\nint8 accuracy: {:.4}\nargmax agreement: {:.4}\n",
            self.float_bytes,
            self.int8_bytes,
            self.size_ratio(),
            self.float_accuracy,
            self.int8_accuracy,
            self.argmax_agreement
        )
    }
}

pub fn quantization_report(float: &ModelGraph, quant: &QuantizedModel, samples: &[Sample]) -> Result<QuantReport> {
    let float_bytes = crate::modelio::to_bytes(float, None)?.len();
    let int8_bytes = crate::modelio::to_bytes(&quant.graph, Some(&quant.tensors))?.len();
    let (float_accuracy, _) = evaluate(float, samples)?;
    let (int8_accuracy, _) = evaluate(&quant.graph, samples)?;
    let mut same = 0usize;
    for s in samples {
        let a = crate::tensor::argmax(&float.predict(&s.inputs)?);
        let b = crate::tensor::argmax(&quant.graph.predict(&s.inputs)?);
        same += usize::from(a == b);
    }
    Ok(QuantReport {
        float_bytes,
        int8_bytes,
        float_accuracy,
        int8_accuracy,
        argmax_agreement: same as f64 / samples.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_checked_values() {
        let t = Tensor::vector(vec![0.0, 1.27, -1.27, 0.005]);
        let q = quantize_tensor(&t).unwrap();
        assert!((q.scale - 0.01).abs() < 1e-15);
        assert_eq!(q.values, vec![0, 127, -127, 0]);
    }

    #[test]
    fn zero_tensor_uses_floor_scale() {
        let q = quantize_tensor(&Tensor::zeros(&[3])).unwrap();
        assert_eq!(q.scale, SCALE_FLOOR);
        assert_eq!(q.dequantize().data(), &[0.0; 3]);
    }

    #[test]
    fn ties_round_to_even() {
        // max 127 gives scale 1, so x/scale is exact
        let t = Tensor::vector(vec![127.0, 2.5, 3.5, -2.5]);
        assert_eq!(quantize_tensor(&t).unwrap().values, vec![127, 2, 4, -2]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(quantize_tensor(&Tensor::vector(vec![f64::NAN])).is_err());
        assert!(QuantizedTensor::new(vec![1], 0.0, vec![1]).is_err());
    }

    #[test]
    fn error_bounded_by_half_scale() {
        let t = Tensor::vector((0..50).map(|i| (i as f64 * 0.37).sin() * 3.0).collect());
        let q = quantize_tensor(&t).unwrap();
        for (a, b) in t.data().iter().zip(q.dequantize().data()) {
            assert!((a - b).abs() <= q.scale / 2.0 + 1e-12);
        }
    }
}
