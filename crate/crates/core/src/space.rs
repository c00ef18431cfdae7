//! Block-wise search space: per-block geometry, the MBConv op menu and the
//! canonical mixed-radix naming of per-block subnets.
//!
//! A subnet of a block assigns one op from the block's menu to every layer.
//! Its [`SubnetId`] is the mixed-radix number whose digit `k` is the menu
//! index of layer `k`'s op (layer 0 is the least-significant digit).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One MBConv-style layer choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpChoice {
    pub kernel_size: usize,
    pub expansion: usize,
}

impl OpChoice {
    pub const fn new(kernel_size: usize, expansion: usize) -> Self {
        Self { kernel_size, expansion }
    }

    /// The six ops of the default menu, in canonical order.
    pub fn default_menu() -> Vec<OpChoice> {
        let mut menu = Vec::with_capacity(6);
        for k in [3, 5, 7] {
            for e in [3, 6] {
                menu.push(OpChoice::new(k, e));
            }
        }
        menu
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Validation(format!(
                "kernel size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if self.expansion == 0 {
            return Err(Error::Validation("expansion ratio must be positive".into()));
        }
        Ok(())
    }
}

impl std::fmt::Display for OpChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "k{}e{}", self.kernel_size, self.expansion)
    }
}

/// Geometry of one searchable block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    index: usize,
    num_layers: usize,
    in_channels: usize,
    out_channels: usize,
    op_menu: Vec<OpChoice>,
}

impl BlockSpec {
    /// Builds a block; the op menu is put into canonical (kernel, expansion)
    /// order and must not contain duplicates.
    pub fn new(
        index: usize,
        num_layers: usize,
        in_channels: usize,
        out_channels: usize,
        mut op_menu: Vec<OpChoice>,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::Validation(format!("block {index}: num_layers must be >= 1")));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Validation(format!("block {index}: channel counts must be positive")));
        }
        if op_menu.is_empty() {
            return Err(Error::Validation(format!("block {index}: op menu is empty")));
        }
        for op in &op_menu {
            op.validate()?;
        }
        op_menu.sort();
        if op_menu.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("block {index}: duplicate op in menu")));
        }
        let block = Self { index, num_layers, in_channels, out_channels, op_menu };
        block.subnet_count_checked()?;
        Ok(block)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn op_menu(&self) -> &[OpChoice] {
        &self.op_menu
    }

    /// Input channel count of `layer` (only layer 0 sees the block input).
    pub fn layer_in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.in_channels
        } else {
            self.out_channels
        }
    }

    fn subnet_count_checked(&self) -> Result<u64> {
        let radix = self.op_menu.len() as u64;
        let mut count: u64 = 1;
        for _ in 0..self.num_layers {
            count = count.checked_mul(radix).ok_or_else(|| {
                Error::Validation(format!("block {}: subnet count overflows u64", self.index))
            })?;
        }
        Ok(count)
    }

    /// `|op_menu| ^ num_layers`.
    pub fn subnet_count(&self) -> u64 {
        (self.op_menu.len() as u64).pow(self.num_layers as u32)
    }

    pub fn op_index(&self, op: OpChoice) -> Option<usize> {
        self.op_menu.binary_search(&op).ok()
    }

    pub fn subnet(&self, value: u64) -> Result<SubnetId> {
        let limit = self.subnet_count();
        if value >= limit {
            return Err(Error::Range { what: "subnet id", value, limit });
        }
        Ok(SubnetId { block_index: self.index, value })
    }

    fn check(&self, id: SubnetId) -> Result<()> {
        if id.block_index != self.index {
            return Err(Error::Validation(format!(
                "subnet belongs to block {}, not block {}",
                id.block_index, self.index
            )));
        }
        let limit = self.subnet_count();
        if id.value >= limit {
            return Err(Error::Range { what: "subnet id", value: id.value, limit });
        }
        Ok(())
    }

    /// Menu index per layer (the mixed-radix digits of `id`).
    pub fn decode_digits(&self, id: SubnetId) -> Result<Vec<usize>> {
        self.check(id)?;
        let radix = self.op_menu.len() as u64;
        let mut rest = id.value;
        let digits = (0..self.num_layers)
            .map(|_| {
                let d = rest % radix;
                rest /= radix;
                d as usize
            })
            .collect();
        Ok(digits)
    }

    pub fn encode_digits(&self, digits: &[usize]) -> Result<SubnetId> {
        if digits.len() != self.num_layers {
            return Err(Error::Validation(format!(
                "expected {} layer ops, got {}",
                self.num_layers,
                digits.len()
            )));
        }
        let radix = self.op_menu.len() as u64;
        let mut value = 0u64;
        for &d in digits.iter().rev() {
            if d >= self.op_menu.len() {
                return Err(Error::Range { what: "op index", value: d as u64, limit: radix });
            }
            value = value * radix + d as u64;
        }
        Ok(SubnetId { block_index: self.index, value })
    }
}

/// Canonical name of one per-block subnet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubnetId {
    pub block_index: usize,
    pub value: u64,
}

pub fn enumerate_block_subnets(block: &BlockSpec) -> Vec<SubnetId> {
    (0..block.subnet_count())
        .map(|value| SubnetId { block_index: block.index, value })
        .collect()
}

pub fn decode_subnet(block: &BlockSpec, id: SubnetId) -> Result<Vec<OpChoice>> {
    Ok(block
        .decode_digits(id)?
        .into_iter()
        .map(|d| block.op_menu[d])
        .collect())
}

pub fn encode_subnet(block: &BlockSpec, ops: &[OpChoice]) -> Result<SubnetId> {
    let digits = ops
        .iter()
        .map(|op| {
            block.op_index(*op).ok_or_else(|| {
                Error::Validation(format!("op {op} is not in block {}'s menu", block.index))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    block.encode_digits(&digits)
}

/// The ordered list of searchable blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    blocks: Vec<BlockSpec>,
}

impl SearchSpace {
    pub fn new(blocks: Vec<BlockSpec>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Validation("search space needs at least one block".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.index != i {
                return Err(Error::Validation(format!("block at position {i} has index {}", b.index)));
            }
            if i > 0 && b.in_channels != blocks[i - 1].out_channels {
                return Err(Error::Validation(format!(
                    "block {i} input channels {} do not match block {} output channels {}",
                    b.in_channels,
                    i - 1,
                    blocks[i - 1].out_channels
                )));
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn block(&self, index: usize) -> Result<&BlockSpec> {
        self.blocks.get(index).ok_or(Error::Range {
            what: "block index",
            value: index as u64,
            limit: self.blocks.len() as u64,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Hex SHA-256 over the canonical JSON form of the resolved space.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("search space serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

impl Default for SearchSpace {
    fn default() -> Self {
        SpaceConfig::default().build().expect("default space is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpConfig {
    pub kernel: usize,
    pub expansion: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub layers: usize,
    pub channels: usize,
    /// Overrides the space-wide menu for this block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op_menu: Option<Vec<OpConfig>>,
}

/// Serialized form of a [`SearchSpace`].
///
/// ```toml
/// input_channels = 24
/// op_menu = [{ kernel = 3, expansion = 3 }, { kernel = 3, expansion = 6 }]
///
/// [[blocks]]
/// layers = 3
/// channels = 24
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "default_op_menu")]
    pub op_menu: Vec<OpConfig>,
    #[serde(default = "default_blocks")]
    pub blocks: Vec<BlockConfig>,
}

fn default_input_channels() -> usize {
    24
}

fn default_op_menu() -> Vec<OpConfig> {
    OpChoice::default_menu()
        .into_iter()
        .map(|op| OpConfig { kernel: op.kernel_size, expansion: op.expansion })
        .collect()
}

fn default_blocks() -> Vec<BlockConfig> {
    const LAYERS: [usize; 6] = [3, 3, 4, 4, 3, 1];
    const CHANNELS: [usize; 6] = [24, 32, 64, 96, 160, 320];
    LAYERS
        .iter()
        .zip(CHANNELS)
        .map(|(&layers, channels)| BlockConfig { layers, channels, op_menu: None })
        .collect()
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            input_channels: default_input_channels(),
            op_menu: default_op_menu(),
            blocks: default_blocks(),
        }
    }
}

impl SpaceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("space config: {e}")))
    }

    pub fn build(&self) -> Result<SearchSpace> {
        let to_ops = |ops: &[OpConfig]| -> Vec<OpChoice> {
            ops.iter().map(|o| OpChoice::new(o.kernel, o.expansion)).collect()
        };
        let mut in_channels = self.input_channels;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let menu = to_ops(b.op_menu.as_deref().unwrap_or(&self.op_menu));
            blocks.push(BlockSpec::new(i, b.layers, in_channels, b.channels, menu)?);
            in_channels = b.channels;
        }
        SearchSpace::new(blocks)
    }
}
