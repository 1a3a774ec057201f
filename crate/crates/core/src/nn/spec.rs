use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Negative slope 0.01.
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Sigmoid,
    /// Unbounded linear output while training, clamped to `[0, 1]` at
    /// inference.
    LinearClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    /// Applied to the output of this conv layer (1-based).
    pub after_conv: usize,
    pub p: f64,
}

/// Number of car-state values appended to the flattened features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateInput;

impl StateInput {
    pub const LEN: usize = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Input height, width and channels.
    pub input: (usize, usize, usize),
    pub convs: Vec<ConvSpec>,
    pub dropout: Option<DropoutSpec>,
    /// Dense widths; the last must be 1.
    pub dense: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    /// Appends normalized speed, previous steering, throttle and brake to
    /// the flattened features.
    pub use_car_state: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::pilotnet()
    }
}

impl ModelSpec {
    /// PilotNet layout with dropout after conv 3, ReLU and a sigmoid head.
    pub fn pilotnet() -> Self {
        let conv = |out_channels, kernel, stride| ConvSpec {
            out_channels,
            kernel,
            stride,
        };
        Self {
            input: (66, 200, 3),
            convs: vec![conv(24, 5, 2), conv(36, 5, 2), conv(48, 5, 2), conv(64, 3, 1), conv(64, 3, 1)],
            dropout: Some(DropoutSpec { after_conv: 3, p: 0.5 }),
            dense: vec![100, 50, 10, 1],
            activation: Activation::Relu,
            head: Head::Sigmoid,
            use_car_state: false,
        }
    }

    /// Same topology with channel widths 2,3,3,4,4 and dense 8,4,2,1.
    pub fn reduced() -> Self {
        let mut spec = Self::pilotnet();
        for (c, w) in spec.convs.iter_mut().zip([2, 3, 3, 4, 4]) {
            c.out_channels = w;
        }
        spec.dense = vec![8, 4, 2, 1];
        spec
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    /// Output `(h, w, c)` of every conv layer under valid padding.
    pub fn conv_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (mut h, mut w, _) = self.input;
        let mut out = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            if h < c.kernel || w < c.kernel || c.stride == 0 {
                return Err(Error::Shape {
                    layer: format!("conv{}", i + 1),
                    expected: format!("input of at least {0}x{0}", c.kernel),
                    got: format!("{h}x{w}"),
                });
            }
            h = (h - c.kernel) / c.stride + 1;
            w = (w - c.kernel) / c.stride + 1;
            out.push((h, w, c.out_channels));
        }
        Ok(out)
    }

    pub fn flatten_len(&self) -> Result<usize> {
        let shapes = self.conv_shapes()?;
        let (h, w, c) = shapes.last().copied().unwrap_or(self.input);
        Ok(h * w * c)
    }

    /// Width of the first dense layer's input.
    pub fn dense_input_len(&self) -> Result<usize> {
        Ok(self.flatten_len()? + if self.use_car_state { StateInput::LEN } else { 0 })
    }

    /// Ordered parameter names and shapes.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        if self.dense.last() != Some(&1) {
            return Err(Error::invalid("last dense layer must have width 1"));
        }
        let mut out = Vec::new();
        let mut cin = self.input.2;
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), vec![c.kernel, c.kernel, cin, c.out_channels]));
            out.push((format!("conv{}.bias", i + 1), vec![c.out_channels]));
            cin = c.out_channels;
        }
        let mut fan_in = self.dense_input_len()?;
        for (j, &width) in self.dense.iter().enumerate() {
            out.push((format!("fc{}.weight", j + 1), vec![fan_in, width]));
            out.push((format!("fc{}.bias", j + 1), vec![width]));
            fan_in = width;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|(_, s)| s.iter().product::<usize>()).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent valid-padding calculator: counts kernel placements by
    /// stepping the window across the input.
    fn placements(size: usize, kernel: usize, stride: usize) -> usize {
        let mut n = 0;
        let mut start = 0;
        while start + kernel <= size {
            n += 1;
            start += stride;
        }
        n
    }

    #[test]
    fn pilotnet_shapes() {
        let spec = ModelSpec::pilotnet();
        let shapes = spec.conv_shapes().unwrap();
        assert_eq!(shapes, vec![(31, 98, 24), (14, 47, 36), (5, 22, 48), (3, 20, 64), (1, 18, 64)]);
        let (mut h, mut w) = (66, 200);
        for (c, &(sh, sw, _)) in spec.convs.iter().zip(&shapes) {
            h = placements(h, c.kernel, c.stride);
            w = placements(w, c.kernel, c.stride);
            assert_eq!((h, w), (sh, sw));
        }
        assert_eq!(spec.flatten_len().unwrap(), 1152);
    }

    #[test]
    fn car_state_adds_four_inputs_to_dense1() {
        let off = ModelSpec::pilotnet();
        let on = ModelSpec {
            use_car_state: true,
            ..ModelSpec::pilotnet()
        };
        assert_eq!(on.param_count().unwrap() - off.param_count().unwrap(), 4 * 100);
        let shapes = on.param_shapes().unwrap();
        let fc1 = shapes.iter().find(|(n, _)| n == "fc1.weight").unwrap();
        assert_eq!(fc1.1, vec![1156, 100]);
    }
}
