use super::Tensor;

/// Negative-side slope used throughout the detectors.
pub const LEAKY_SLOPE: f32 = 0.1;

pub fn leaky_relu(input: &Tensor, slope: f32) -> Tensor {
    input.map(|x| if x >= 0.0 { x } else { slope * x })
}

/// Backward pass given the forward *input*.
pub fn leaky_relu_backward(input: &Tensor, grad_out: &Tensor, slope: f32) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x < 0.0 {
            *g *= slope;
        }
    }
    grad
}
