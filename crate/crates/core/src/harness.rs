//! Deterministic synthetic scenarios: ground-truth tracks, poses, textured
//! frames, per-identity embeddings and exact flow fields, plus a corruption
//! pass that degrades them into realistic detector output.
//!
//! Positions, velocities and box extents are quantized to a quarter-pixel
//! grid so the analytically emitted flow fields propagate boxes and
//! keypoints between frames without rounding error. The generator is
//! ChaCha8-seeded and bit-deterministic in its seed.

use crate::error::{Error, Result};
use crate::types::{BBox, Detection, FlowField, GrayFrame, Keypoint, Pose, TrackedBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

/// Agents stay at least this far inside the arena walls.
const WALL_PAD: f64 = 2.0;
/// Minimum spawn separation between box edges, in pixels.
const SPAWN_MARGIN: f64 = 8.0;
/// Injected false positives must have IoU below this against every GT box.
const FP_MAX_IOU: f64 = 0.2;

fn q_quarter(v: f64) -> f64 {
    (v * 4.0).round() / 4.0
}

fn q_half(v: f64) -> f64 {
    (v * 2.0).round() / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub n_agents: usize,
    pub n_frames: i64,
    pub arena: (usize, usize),
    /// Sampled agent speed in pixels per frame (min, max).
    pub speed_range: (f64, f64),
    /// Sampled box side length in pixels (min, max).
    pub box_size_range: (f64, f64),
    pub k_keypoints: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            n_agents: 3,
            n_frames: 30,
            arena: (128, 128),
            speed_range: (0.5, 2.0),
            box_size_range: (14.0, 24.0),
            k_keypoints: 5,
            embedding_dim: 16,
            seed: 1,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_frames < 1 || self.k_keypoints == 0 {
            return Err(Error::validation(
                "n_agents, n_frames and k_keypoints must be positive",
            ));
        }
        if self.embedding_dim == 0 {
            return Err(Error::validation("embedding_dim must be positive"));
        }
        if self.n_agents > self.embedding_dim {
            return Err(Error::validation(format!(
                "cannot guarantee near-orthogonal embeddings for {} agents in dimension {}",
                self.n_agents, self.embedding_dim
            )));
        }
        if self.speed_range.0 < 0.0 || self.speed_range.0 > self.speed_range.1 {
            return Err(Error::validation("bad speed_range"));
        }
        if self.box_size_range.0 < 2.0 || self.box_size_range.0 > self.box_size_range.1 {
            return Err(Error::validation("box sides must be at least 2 pixels"));
        }
        let max_half = q_half(self.box_size_range.1) / 2.0;
        let needed = 2.0 * (max_half + WALL_PAD) + 1.0;
        if (self.arena.0 as f64) < needed || (self.arena.1 as f64) < needed {
            return Err(Error::validation(format!(
                "arena {}x{} too small for boxes up to {} pixels",
                self.arena.0, self.arena.1, self.box_size_range.1
            )));
        }
        Ok(())
    }
}

/// Occlusion window: the agent's detections vanish for `length` frames
/// starting at `start_frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionGap {
    pub agent: usize,
    pub start_frame: i64,
    pub length: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    /// Probability of dropping each GT detection.
    pub drop_rate: f64,
    /// Zero-mean Gaussian jitter applied to box corners and keypoints.
    pub jitter_std: f64,
    /// Expected spurious boxes per frame (Poisson).
    pub fp_rate: f64,
    pub occlusion_gaps: Vec<OcclusionGap>,
    /// Gaussian noise added to embeddings before renormalization.
    pub embedding_noise_std: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            drop_rate: 0.0,
            jitter_std: 0.0,
            fp_rate: 0.0,
            occlusion_gaps: Vec::new(),
            embedding_noise_std: 0.0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self, scenario: &ScenarioParams) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(Error::validation("drop_rate must lie in [0, 1]"));
        }
        if self.jitter_std < 0.0 || self.fp_rate < 0.0 || self.embedding_noise_std < 0.0 {
            return Err(Error::validation("noise magnitudes must be nonnegative"));
        }
        for gap in &self.occlusion_gaps {
            if gap.agent >= scenario.n_agents {
                return Err(Error::validation(format!(
                    "occlusion gap references agent {} of {}",
                    gap.agent, scenario.n_agents
                )));
            }
            if gap.length < 1
                || gap.start_frame < 1
                || gap.start_frame + gap.length - 1 > scenario.n_frames
            {
                return Err(Error::validation(format!(
                    "occlusion gap {:?} outside frame range 1..={}",
                    gap, scenario.n_frames
                )));
            }
        }
        Ok(())
    }
}

/// Explicit agent placement for hand-built scenarios; values are quantized
/// to the quarter-pixel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSpec {
    pub center: (f64, f64),
    pub velocity: (f64, f64),
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone)]
struct Agent {
    half_w: f64,
    half_h: f64,
    /// Center per frame, index `frame - 1`.
    positions: Vec<(f64, f64)>,
    /// Rigid keypoint offsets from the box center.
    kp_offsets: Vec<(f64, f64)>,
    embedding: Vec<f32>,
}

/// A generated scenario: full ground truth plus on-demand frames and flows.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: ScenarioParams,
    agents: Vec<Agent>,
    pub gt_tracks: Vec<TrackedBox>,
    pub gt_poses: Vec<Pose>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn texture(agent: usize, u: i64, v: i64) -> f32 {
    let key = splitmix64(
        splitmix64(agent as u64 + 1) ^ ((u as u64) << 32 | (v as u64 & 0xFFFF_FFFF)),
    );
    (0.25 + 0.75 * ((key >> 11) as f64 / (1u64 << 53) as f64)) as f32
}

/// One reflected constant-velocity step within [lo, hi].
fn advance(pos: f64, vel: f64, lo: f64, hi: f64) -> (f64, f64) {
    let mut p = pos + vel;
    let mut v = vel;
    loop {
        if p < lo {
            p = 2.0 * lo - p;
            v = -v;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

fn near_orthogonal_embedding(rng: &mut ChaCha8Rng, dim: usize, axis: usize) -> Vec<f32> {
    // basis vector plus a perturbation of norm <= 0.15 keeps every pairwise
    // cosine distance above 0.5
    let eta = 0.15;
    let bound = eta / (dim as f64).sqrt();
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-bound..=bound)).collect();
    v[axis] += 1.0;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

fn build_scenario(params: &ScenarioParams, specs: Vec<AgentSpec>, rng: &mut ChaCha8Rng) -> Result<Scenario> {
    let mut agents = Vec::with_capacity(specs.len());
    for (idx, spec) in specs.iter().enumerate() {
        let half_w = q_half(spec.width).max(2.0) / 2.0;
        let half_h = q_half(spec.height).max(2.0) / 2.0;
        let (lo_x, hi_x) = (half_w + WALL_PAD, params.arena.0 as f64 - half_w - WALL_PAD);
        let (lo_y, hi_y) = (half_h + WALL_PAD, params.arena.1 as f64 - half_h - WALL_PAD);
        let mut cx = q_quarter(spec.center.0).clamp(lo_x, hi_x);
        let mut cy = q_quarter(spec.center.1).clamp(lo_y, hi_y);
        let mut vx = q_quarter(spec.velocity.0);
        let mut vy = q_quarter(spec.velocity.1);
        let mut positions = Vec::with_capacity(params.n_frames as usize);
        for _ in 0..params.n_frames {
            positions.push((cx, cy));
            (cx, vx) = advance(cx, vx, lo_x, hi_x);
            (cy, vy) = advance(cy, vy, lo_y, hi_y);
        }
        let kp_offsets: Vec<(f64, f64)> = (0..params.k_keypoints)
            .map(|_| {
                (
                    q_quarter(rng.random_range(-0.8 * half_w..=0.8 * half_w)),
                    q_quarter(rng.random_range(-0.8 * half_h..=0.8 * half_h)),
                )
            })
            .collect();
        let embedding = near_orthogonal_embedding(rng, params.embedding_dim, idx);
        agents.push(Agent {
            half_w,
            half_h,
            positions,
            kp_offsets,
            embedding,
        });
    }

    let mut gt_tracks = Vec::new();
    let mut gt_poses = Vec::new();
    for frame in 1..=params.n_frames {
        for (idx, agent) in agents.iter().enumerate() {
            let (cx, cy) = agent.positions[(frame - 1) as usize];
            let bbox = BBox::new(
                cx - agent.half_w,
                cy - agent.half_h,
                cx + agent.half_w,
                cy + agent.half_h,
            )?;
            gt_tracks.push(TrackedBox::new(frame, idx as i64 + 1, bbox, 1.0)?);
            let keypoints = agent
                .kp_offsets
                .iter()
                .map(|&(ox, oy)| Keypoint::new(cx + ox, cy + oy, 1.0))
                .collect::<Result<Vec<_>>>()?;
            gt_poses.push(Pose::new(frame, Some(idx as i64 + 1), keypoints)?);
        }
    }

    Ok(Scenario {
        params: params.clone(),
        agents,
        gt_tracks,
        gt_poses,
    })
}

/// Generate a random scenario: agents spawn well separated and bounce off
/// the arena walls with constant speed.
pub fn generate(params: &ScenarioParams) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut specs: Vec<AgentSpec> = Vec::with_capacity(params.n_agents);
    for _ in 0..params.n_agents {
        let width = q_half(rng.random_range(params.box_size_range.0..=params.box_size_range.1));
        let height = q_half(rng.random_range(params.box_size_range.0..=params.box_size_range.1));
        let speed = rng.random_range(params.speed_range.0..=params.speed_range.1);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let velocity = (q_quarter(speed * angle.cos()), q_quarter(speed * angle.sin()));
        let (lo_x, hi_x) = (
            width / 2.0 + WALL_PAD,
            params.arena.0 as f64 - width / 2.0 - WALL_PAD,
        );
        let (lo_y, hi_y) = (
            height / 2.0 + WALL_PAD,
            params.arena.1 as f64 - height / 2.0 - WALL_PAD,
        );
        let mut placed = None;
        for _ in 0..1000 {
            let cx = q_quarter(rng.random_range(lo_x..=hi_x));
            let cy = q_quarter(rng.random_range(lo_y..=hi_y));
            let clear = specs.iter().all(|other| {
                let dx = (cx - other.center.0).abs();
                let dy = (cy - other.center.1).abs();
                dx >= (width + other.width) / 2.0 + SPAWN_MARGIN
                    || dy >= (height + other.height) / 2.0 + SPAWN_MARGIN
            });
            if clear {
                placed = Some((cx, cy));
                break;
            }
        }
        let center = placed.ok_or_else(|| {
            Error::validation("could not place agents without overlap; arena too crowded")
        })?;
        specs.push(AgentSpec {
            center,
            velocity,
            width,
            height,
        });
    }
    build_scenario(params, specs, &mut rng)
}

/// Scenario with hand-placed agents (keypoint offsets and embeddings still
/// come from the seed).
pub fn generate_with_agents(params: &ScenarioParams, specs: &[AgentSpec]) -> Result<Scenario> {
    params.validate()?;
    if specs.len() != params.n_agents {
        return Err(Error::validation(format!(
            "expected {} agent specs, got {}",
            params.n_agents,
            specs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    build_scenario(params, specs.to_vec(), &mut rng)
}

impl Scenario {
    pub fn frames(&self) -> std::ops::RangeInclusive<i64> {
        1..=self.params.n_frames
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn embedding(&self, agent: usize) -> &[f32] {
        &self.agents[agent].embedding
    }

    pub fn agent_box(&self, agent: usize, frame: i64) -> Result<BBox> {
        let a = &self.agents[agent];
        let (cx, cy) = a.positions[(frame - 1) as usize];
        BBox::new(cx - a.half_w, cy - a.half_h, cx + a.half_w, cy + a.half_h)
    }

    /// Exact flow between adjacent frames: each agent's frame-`from`
    /// footprint (expanded to whole pixels) carries its displacement,
    /// background is zero. Later agents overwrite on overlap.
    pub fn flow(&self, from: i64, to: i64) -> Result<FlowField> {
        if (from - to).abs() != 1 {
            return Err(Error::usage(format!(
                "flow is defined between adjacent frames, got {from} -> {to}"
            )));
        }
        for f in [from, to] {
            if !(1..=self.params.n_frames).contains(&f) {
                return Err(Error::usage(format!("frame {f} outside scenario range")));
            }
        }
        let (w, h) = self.params.arena;
        let mut field = FlowField::zeros(w, h);
        for agent in &self.agents {
            let (fx, fy) = agent.positions[(from - 1) as usize];
            let (tx, ty) = agent.positions[(to - 1) as usize];
            let (dx, dy) = ((tx - fx) as f32, (ty - fy) as f32);
            let x_lo = ((fx - agent.half_w).floor().max(0.0)) as usize;
            let x_hi = ((fx + agent.half_w).ceil().min(w as f64 - 1.0)) as usize;
            let y_lo = ((fy - agent.half_h).floor().max(0.0)) as usize;
            let y_hi = ((fy + agent.half_h).ceil().min(h as f64 - 1.0)) as usize;
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    field.set(x, y, dx, dy);
                }
            }
        }
        Ok(field)
    }

    /// Render one frame: zero background, each agent drawn as a textured
    /// blob whose pattern rides rigidly with the box.
    pub fn frame_image(&self, frame: i64) -> Result<GrayFrame> {
        if !(1..=self.params.n_frames).contains(&frame) {
            return Err(Error::usage(format!("frame {frame} outside scenario range")));
        }
        let (w, h) = self.params.arena;
        let mut img = GrayFrame::zeros(w, h);
        for (idx, agent) in self.agents.iter().enumerate() {
            let (cx, cy) = agent.positions[(frame - 1) as usize];
            let x_lo = (cx - agent.half_w).ceil() as i64;
            let x_hi = (cx + agent.half_w).floor() as i64;
            let y_lo = (cy - agent.half_h).ceil() as i64;
            let y_hi = (cy + agent.half_h).floor() as i64;
            for y in y_lo.max(0)..=y_hi.min(h as i64 - 1) {
                for x in x_lo.max(0)..=x_hi.min(w as i64 - 1) {
                    img.set(x as usize, y as usize, texture(idx, x - x_lo, y - y_lo));
                }
            }
        }
        Ok(img)
    }

    /// Perfect detections: the GT boxes with scores 1.0 and the per-identity
    /// embeddings attached.
    pub fn perfect_detections(&self) -> Result<Vec<Detection>> {
        self.gt_tracks
            .iter()
            .map(|t| {
                Detection::new(t.frame, t.bbox, 1.0)?
                    .with_embedding(self.agents[(t.track_id - 1) as usize].embedding.clone())
            })
            .collect()
    }
}

/// Degraded detector output: detections (with embeddings) plus one pose per
/// detection row.
#[derive(Debug, Clone)]
pub struct CorruptedScenario {
    pub detections: Vec<Detection>,
    pub poses: Vec<Pose>,
}

/// Apply drops, jitter, spurious boxes, occlusion gaps and embedding noise
/// to a scenario's ground truth. Deterministic in `(scenario, seed)`.
pub fn corrupt(scenario: &Scenario, noise: &NoiseParams, seed: u64) -> Result<CorruptedScenario> {
    noise.validate(&scenario.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.jitter_std)
        .map_err(|e| Error::validation(format!("bad jitter_std: {e}")))?;
    let emb_noise = Normal::new(0.0, noise.embedding_noise_std)
        .map_err(|e| Error::validation(format!("bad embedding_noise_std: {e}")))?;

    let mut detections = Vec::new();
    let mut poses = Vec::new();
    let (arena_w, arena_h) = (
        scenario.params.arena.0 as f64,
        scenario.params.arena.1 as f64,
    );

    for frame in scenario.frames() {
        let gt_boxes: Vec<BBox> = (0..scenario.n_agents())
            .map(|a| scenario.agent_box(a, frame))
            .collect::<Result<Vec<_>>>()?;
        for agent in 0..scenario.n_agents() {
            let occluded = noise.occlusion_gaps.iter().any(|g| {
                g.agent == agent && (g.start_frame..g.start_frame + g.length).contains(&frame)
            });
            if occluded {
                continue;
            }
            if rng.random::<f64>() < noise.drop_rate {
                continue;
            }
            let gt = &gt_boxes[agent];
            let x1 = gt.x1 + jitter.sample(&mut rng);
            let y1 = gt.y1 + jitter.sample(&mut rng);
            let mut x2 = gt.x2 + jitter.sample(&mut rng);
            let mut y2 = gt.y2 + jitter.sample(&mut rng);
            if x2 <= x1 {
                x2 = x1 + 0.25;
            }
            if y2 <= y1 {
                y2 = y1 + 0.25;
            }
            let embedding = if noise.embedding_noise_std > 0.0 {
                let mut v: Vec<f64> = scenario
                    .embedding(agent)
                    .iter()
                    .map(|&x| x as f64 + emb_noise.sample(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-9 {
                    v = scenario.embedding(agent).iter().map(|&x| x as f64).collect();
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| (x / norm) as f32).collect()
            } else {
                scenario.embedding(agent).to_vec()
            };
            detections.push(
                Detection::new(frame, BBox::new(x1, y1, x2, y2)?, 1.0)?
                    .with_embedding(embedding)?,
            );
            let gt_pose = scenario
                .gt_poses
                .iter()
                .find(|p| p.frame == frame && p.track_id == Some(agent as i64 + 1))
                .expect("scenario has a pose per agent per frame");
            let keypoints = gt_pose
                .keypoints
                .iter()
                .map(|k| {
                    Keypoint::new(
                        k.x + jitter.sample(&mut rng),
                        k.y + jitter.sample(&mut rng),
                        k.conf,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            poses.push(Pose::new(frame, None, keypoints)?);
        }

        if noise.fp_rate > 0.0 {
            let poisson = Poisson::new(noise.fp_rate)
                .map_err(|e| Error::validation(format!("bad fp_rate: {e}")))?;
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                let mut placed = None;
                for _ in 0..50 {
                    let w = rng
                        .random_range(scenario.params.box_size_range.0..=scenario.params.box_size_range.1);
                    let h = rng
                        .random_range(scenario.params.box_size_range.0..=scenario.params.box_size_range.1);
                    let cx = rng.random_range(w / 2.0..=arena_w - w / 2.0);
                    let cy = rng.random_range(h / 2.0..=arena_h - h / 2.0);
                    let candidate =
                        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)?;
                    if gt_boxes
                        .iter()
                        .all(|g| crate::detpost::iou(g, &candidate) < FP_MAX_IOU)
                    {
                        placed = Some(candidate);
                        break;
                    }
                }
                let Some(bbox) = placed else { continue };
                let mut v: Vec<f64> = (0..scenario.params.embedding_dim)
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                let embedding: Vec<f32> = v.drain(..).map(|x| (x / norm) as f32).collect();
                let score = rng.random_range(0.2..=0.95);
                detections.push(
                    Detection::new(frame, bbox, score)?.with_embedding(embedding)?,
                );
                let keypoints = (0..scenario.params.k_keypoints)
                    .map(|_| {
                        Keypoint::new(
                            rng.random_range(bbox.x1..=bbox.x2),
                            rng.random_range(bbox.y1..=bbox.y2),
                            rng.random_range(0.2..=0.8),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                poses.push(Pose::new(frame, None, keypoints)?);
            }
        }
    }
    Ok(CorruptedScenario { detections, poses })
}
