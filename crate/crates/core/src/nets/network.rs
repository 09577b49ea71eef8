use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{resolve_extent, ActShape, HeadRole, NetRole, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Padding, Tensor, Var};

/// Probe extent used to verify shape inference when a network is built.
const PROBE_EXTENT: usize = 64;

/// Parameter indices for one convolution inside a layer.
#[derive(Debug, Clone, Copy)]
struct ConvParams {
    weight: usize,
    bias: usize,
    norm: Option<(usize, usize)>,
}

/// An instantiated network: a spec plus its parameter tensors in declaration order.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Tensor>,
    layout: Vec<Vec<ConvParams>>,
}

/// The parameters of one network recorded on a particular graph.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Head outputs (in spec order) and requested tap activations.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub heads: Vec<Var>,
    pub taps: BTreeMap<String, Var>,
}

fn shapes_for(spec: &NetworkSpec) -> Result<(Vec<Vec<usize>>, Vec<Vec<ConvParams>>)> {
    let in_ch = spec.in_channels()?;
    let mut shapes = Vec::new();
    let mut layout = Vec::new();
    for (l, &cin) in spec.layers.iter().zip(&in_ch) {
        let mut convs = Vec::with_capacity(l.repeat);
        for r in 0..l.repeat {
            let c = if r == 0 { cin } else { l.channels };
            let weight = shapes.len();
            shapes.push(vec![l.channels, c, l.kernel, l.kernel]);
            shapes.push(vec![l.channels]);
            let norm = (spec.affine_norm && !spec.is_head(&l.name)).then(|| {
                shapes.push(vec![l.channels]);
                shapes.push(vec![l.channels]);
                (weight + 2, weight + 3)
            });
            convs.push(ConvParams {
                weight,
                bias: weight + 1,
                norm,
            });
        }
        layout.push(convs);
    }
    Ok((shapes, layout))
}

/// Instantiates a network with He-normal weights and zero biases drawn from `seed`.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    spec.infer_shapes(PROBE_EXTENT, PROBE_EXTENT)?;
    let (shapes, layout) = shapes_for(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
    for convs in &layout {
        for cp in convs {
            let shape = params[cp.weight].shape().to_vec();
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            params[cp.weight] = Tensor::randn(shape, (2.0 / fan_in).sqrt(), &mut rng);
            if let Some((gamma, _)) = cp.norm {
                params[gamma].data_mut().fill(1.0);
            }
        }
    }
    Ok(Network {
        spec: spec.clone(),
        params,
        layout,
    })
}

impl Network {
    /// Rebuilds a network from a spec and an exact parameter list (checkpoint loading).
    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let (shapes, layout) = shapes_for(&spec)?;
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s != p.shape()) {
            return Err(Error::format(
                "parameter shapes do not match the network spec",
            ));
        }
        Ok(Self {
            spec,
            params,
            layout,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn role(&self) -> NetRole {
        self.spec.role
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Parameter indices `(weight, bias)` of the first convolution of `layer`.
    pub fn conv_param_indices(&self, layer: &str) -> Option<(usize, usize)> {
        let i = self.spec.layers.iter().position(|l| l.name == layer)?;
        self.layout[i].first().map(|c| (c.weight, c.bias))
    }

    /// Records the parameters on `g`; `trainable = false` freezes them for this graph.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Binding> {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { g.param(p) } else { g.constant(p) })
            .collect::<Result<_>>()?;
        Ok(Binding { vars })
    }

    /// Wraps variables already recorded on a graph (one per parameter, in order) as a
    /// binding of this network.
    pub fn binding_from(&self, vars: &[Var]) -> Result<Binding> {
        if vars.len() != self.params.len() {
            return Err(Error::usage(format!(
                "network has {} parameter tensors, got {} variables",
                self.params.len(),
                vars.len()
            )));
        }
        Ok(Binding {
            vars: vars.to_vec(),
        })
    }

    /// Adds the gradients reached through `binding` into the parameter buffers.
    pub fn collect_grads(&mut self, grads: &Gradients, binding: &Binding) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&binding.vars) {
            grads.accumulate_into(v, p)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Tensor::clear_grad);
    }

    pub fn activation_shapes(&self, h: usize, w: usize) -> Result<Vec<ActShape>> {
        self.spec.infer_shapes(h, w)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        binding: &Binding,
        inputs: &[Var],
        taps: &[&str],
    ) -> Result<ForwardOutput> {
        forward_with_taps(self, g, binding, inputs, taps)
    }

    /// Only the tapped activations: layers that no tap depends on are skipped and
    /// `heads` is left empty.
    pub fn features(
        &self,
        g: &mut Graph,
        binding: &Binding,
        inputs: &[Var],
        taps: &[&str],
    ) -> Result<ForwardOutput> {
        run_forward(self, g, binding, inputs, taps, false)
    }
}

/// Runs the network on `inputs` (one per declared input, in order) and returns the
/// output heads together with the post-activation tensors of the requested taps.
pub fn forward_with_taps(
    net: &Network,
    g: &mut Graph,
    binding: &Binding,
    inputs: &[Var],
    taps: &[&str],
) -> Result<ForwardOutput> {
    run_forward(net, g, binding, inputs, taps, true)
}

/// Layers needed to produce `taps`, as a mask over `spec.layers`.
fn needed_layers(spec: &NetworkSpec, taps: &[&str]) -> Vec<bool> {
    let mut need = vec![false; spec.layers.len()];
    let mut stack: Vec<&str> = taps.to_vec();
    while let Some(name) = stack.pop() {
        if let Some(i) = spec.layers.iter().position(|l| l.name == name) {
            if !need[i] {
                need[i] = true;
                stack.extend(spec.layers[i].sources.iter().map(String::as_str));
            }
        }
    }
    need
}

fn run_forward(
    net: &Network,
    g: &mut Graph,
    binding: &Binding,
    inputs: &[Var],
    taps: &[&str],
    heads: bool,
) -> Result<ForwardOutput> {
    let spec = &net.spec;
    if inputs.len() != spec.inputs.len() {
        return Err(Error::usage(format!(
            "network takes {} inputs, got {}",
            spec.inputs.len(),
            inputs.len()
        )));
    }
    if binding.vars.len() != net.params.len() {
        return Err(Error::usage("binding belongs to a different network"));
    }
    if let Some(t) = taps.iter().find(|t| spec.layer(t).is_none()) {
        return Err(Error::usage(format!("unknown tap `{t}`")));
    }
    let mut acts: HashMap<&str, Var> = HashMap::new();
    for (i, (is, &v)) in spec.inputs.iter().zip(inputs).enumerate() {
        let sh = g.shape(v);
        if sh.len() != 4 || sh[1] != is.channels {
            return Err(Error::config(format!(
                "input {i} (`{}`) expects {} channels, got shape {sh:?}",
                is.name, is.channels
            )));
        }
        acts.insert(&is.name, v);
    }
    let need = if heads {
        vec![true; spec.layers.len()]
    } else {
        needed_layers(spec, taps)
    };
    for ((l, convs), _) in spec
        .layers
        .iter()
        .zip(&net.layout)
        .zip(&need)
        .filter(|(_, &n)| n)
    {
        let run = |g: &mut Graph| -> Result<Var> {
            let mut srcs: Vec<Var> = l.sources.iter().map(|s| acts[s.as_str()]).collect();
            if l.upsample {
                let ext: Vec<ActShape> = srcs
                    .iter()
                    .map(|&v| {
                        let s = g.shape(v);
                        ActShape {
                            channels: s[1],
                            h: s[2],
                            w: s[3],
                        }
                    })
                    .collect();
                let (th, _) = resolve_extent(l, &ext)?;
                let factor = th / ext[0].h;
                if factor > 1 {
                    srcs[0] = g.bilinear_upsample(srcs[0], factor)?;
                }
            }
            let mut x = if srcs.len() == 1 {
                srcs[0]
            } else {
                g.concat_channels(&srcs)?
            };
            let head = spec.is_head(&l.name);
            for (r, cp) in convs.iter().enumerate() {
                let stride = if r == 0 { l.stride } else { 1 };
                let b = &binding.vars;
                x = g.conv2d(x, b[cp.weight], Some(b[cp.bias]), stride, Padding::Same)?;
                if let Some((gamma, beta)) = cp.norm {
                    x = g.affine_norm(x, b[gamma], b[beta])?;
                }
                if !head {
                    x = g.relu(x)?;
                }
            }
            Ok(x)
        };
        let out = run(g).map_err(|e| e.in_layer(&l.name))?;
        acts.insert(&l.name, out);
    }
    let mut outs = Vec::with_capacity(spec.heads.len());
    for h in spec.heads.iter().filter(|_| heads) {
        let v = acts[h.layer.as_str()];
        outs.push(if h.role == HeadRole::Logit {
            g.global_avg_pool(v).map_err(|e| e.in_layer(&h.layer))?
        } else {
            v
        });
    }
    let taps = taps.iter().map(|t| (t.to_string(), acts[*t])).collect();
    Ok(ForwardOutput { heads: outs, taps })
}
