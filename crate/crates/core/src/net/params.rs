use crate::error::{Error, Result};
use crate::tensor::{BatchNormStats, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsId(pub(crate) usize);

/// A named trainable tensor. `decay` marks conv/linear weights, the only
/// parameters that receive weight decay.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub decay: bool,
}

/// Every parameter and batch-norm running statistic of a model, in creation
/// order. Layers refer to entries by id.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    stats: Vec<(String, BatchNormStats)>,
}

impl ParamStore {
    pub(crate) fn add(&mut self, name: String, shape: &[usize], data: Vec<f64>, decay: bool) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "{name}");
        let value = Tensor::parameter(shape, data).expect("parameter shape");
        self.params.push(Param { name, value, decay });
        ParamId(self.params.len() - 1)
    }

    pub(crate) fn add_stats(&mut self, name: String, channels: usize) -> StatsId {
        self.stats.push((name, BatchNormStats::new(channels)));
        StatsId(self.stats.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn stats(&self, id: StatsId) -> &BatchNormStats {
        &self.stats[id.0].1
    }

    pub(crate) fn set_stats(&mut self, id: StatsId, stats: BatchNormStats) {
        self.stats[id.0].1 = stats;
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn stats_entries(&self) -> &[(String, BatchNormStats)] {
        &self.stats
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Replaces a parameter's values with a fresh leaf of the same shape.
    pub fn set(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Input(format!("no parameter named `{name}`")))?;
        p.value = Tensor::parameter(p.value.shape(), data)?;
        Ok(())
    }

    pub fn set_by_index(&mut self, index: usize, data: Vec<f64>) -> Result<()> {
        let p = &mut self.params[index];
        p.value = Tensor::parameter(p.value.shape(), data)?;
        Ok(())
    }

    pub fn set_stats_by_name(&mut self, name: &str, stats: BatchNormStats) -> Result<()> {
        let slot = self
            .stats
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Input(format!("no batch-norm statistics named `{name}`")))?;
        if slot.1.mean.len() != stats.mean.len() || slot.1.var.len() != stats.var.len() {
            return Err(Error::Format(format!(
                "statistics `{name}` sized {} but got {}",
                slot.1.mean.len(),
                stats.mean.len()
            )));
        }
        slot.1 = stats;
        Ok(())
    }

    pub fn zero_grads(&self) {
        self.params.iter().for_each(|p| p.value.zero_grad());
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
