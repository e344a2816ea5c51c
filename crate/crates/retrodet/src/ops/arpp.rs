//! Atrous retrospective pyramid pooling: parallel retro-conv branches with
//! distinct dilations, each followed by two 3x3 spatial convolutions and a
//! full-length temporal average pooling, concatenated along channels.

use crate::elem::Elem;
use crate::ops::{
    conv3d, relu, retro_conv, temporal_avg_pool, Conv3Kernel, OpError, RetroKernel,
};
use crate::tensor::{concat_channels, Tensor5};

/// Branch layout of an ARPP module: distinct dilations, N/m filters each.
#[derive(Debug, Clone)]
pub struct ArppConfig {
    pub dilations: Vec<usize>,
    pub total_filters: usize,
}

impl ArppConfig {
    pub fn new(dilations: Vec<usize>, total_filters: usize) -> Result<Self, OpError> {
        if dilations.is_empty() {
            return Err(OpError::Config("ARPP needs at least one branch".into()));
        }
        let mut seen = dilations.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != dilations.len() || dilations.iter().any(|&d| d == 0) {
            return Err(OpError::Config("ARPP dilations must be distinct positive integers".into()));
        }
        if total_filters == 0 || total_filters % dilations.len() != 0 {
            return Err(OpError::Config(format!(
                "total filters {} not divisible by branch count {}",
                total_filters,
                dilations.len()
            )));
        }
        Ok(ArppConfig { dilations, total_filters })
    }

    pub fn filters_per_branch(&self) -> usize {
        self.total_filters / self.dilations.len()
    }
}

/// One retro-module branch: atrous retro conv, then two channel-preserving
/// 3x3 spatial convolutions, ReLU after each layer, temporal mean last.
#[derive(Debug, Clone)]
pub struct RetroModule<T: Elem> {
    pub retro: RetroKernel<T>,
    pub conv1: Conv3Kernel<T>,
    pub conv2: Conv3Kernel<T>,
}

impl<T: Elem> RetroModule<T> {
    pub fn forward(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, OpError> {
        let y = relu(&retro_conv(x, &self.retro)?);
        let y = relu(&conv3d(&y, &self.conv1)?);
        let y = relu(&conv3d(&y, &self.conv2)?);
        temporal_avg_pool(&y)
    }
}

/// Run every branch on the same input and concatenate the change feature
/// maps along channels, in branch order.
pub fn arpp<T: Elem>(
    x: &Tensor5<T>,
    cfg: &ArppConfig,
    branches: &[RetroModule<T>],
) -> Result<Tensor5<T>, OpError> {
    if branches.len() != cfg.dilations.len() {
        return Err(OpError::Config(format!(
            "expected {} branch kernels, got {}",
            cfg.dilations.len(),
            branches.len()
        )));
    }
    let per = cfg.filters_per_branch();
    let mut out: Option<Tensor5<T>> = None;
    for (branch, &dil) in branches.iter().zip(&cfg.dilations) {
        if branch.retro.dilation != dil {
            return Err(OpError::Config("branch dilation does not match config".into()));
        }
        if branch.retro.weights.dims().n != per {
            return Err(OpError::Config(format!(
                "branch must produce {per} filters, got {}",
                branch.retro.weights.dims().n
            )));
        }
        let y = branch.forward(x)?;
        out = Some(match out {
            None => y,
            Some(acc) => concat_channels(&acc, &y)?,
        });
    }
    Ok(out.expect("at least one branch"))
}
