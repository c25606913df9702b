//! StationWorld: a deterministic 2-D point-robot environment with four
//! stations, each activated by a distinct motion primitive, plus scripted
//! demonstration generators. Episodes reward 1 exactly when the next
//! subtask of an ordered 4-subtask sequence completes; the target sequence
//! is held out of the demonstration distribution.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ArchiveMetadata, DatasetArchive, Observations, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{derive_seed_indexed, rng_from_seed};

pub const N_STATIONS: usize = 4;
/// Observation layout: [px, py, vx, vy, flags×4, station xy×4].
pub const OBS_DIM: usize = 4 + N_STATIONS + 2 * N_STATIONS;
pub const ACT_DIM: usize = 2;
/// Descriptor layout: [primitive one-hot×4, progress, station x, station y].
pub const DESCRIPTOR_DIM: usize = N_STATIONS + 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationWorldConfig {
    /// Hard episode cap in low-level steps.
    pub episode_cap: usize,
    /// Robot must stay within this radius of the next-required station...
    pub activation_radius: f64,
    /// ...for this many consecutive steps to complete the subtask.
    pub dwell_steps: usize,
    pub start_jitter: f64,
    pub velocity_decay: f64,
    pub acceleration_gain: f64,
    pub world_bound: f64,
    /// Emit 64x64x3 renderings instead of flat vectors.
    pub image_observations: bool,
}

impl Default for StationWorldConfig {
    fn default() -> Self {
        Self {
            episode_cap: 280,
            activation_radius: 0.22,
            dwell_steps: 5,
            start_jitter: 0.05,
            velocity_decay: 0.85,
            acceleration_gain: 0.03,
            world_bound: 1.2,
            image_observations: false,
        }
    }
}

/// Fixed station positions (corners of the arena).
pub const STATION_POSITIONS: [[f64; 2]; N_STATIONS] =
    [[-0.8, 0.8], [0.8, 0.8], [0.8, -0.8], [-0.8, -0.8]];

/// An ordered sequence of 4 subtasks over stations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub sequence: Vec<usize>,
}

impl TaskSpec {
    pub fn new(sequence: Vec<usize>) -> Result<Self> {
        if sequence.len() != N_STATIONS {
            return Err(Error::InvalidArgument(format!(
                "task sequence must have {} subtasks, got {}",
                N_STATIONS,
                sequence.len()
            )));
        }
        let mut seen = [false; N_STATIONS];
        for &s in &sequence {
            if s >= N_STATIONS || seen[s] {
                return Err(Error::InvalidArgument(format!(
                    "task sequence {sequence:?} is not a permutation of stations"
                )));
            }
            seen[s] = true;
        }
        Ok(Self { sequence })
    }

    /// The held-out evaluation task used throughout the experiments.
    pub fn default_target() -> Self {
        Self {
            sequence: vec![1, 0, 3, 2],
        }
    }
}

fn all_permutations() -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(24);
    let mut items: Vec<usize> = (0..N_STATIONS).collect();
    permute(&mut items, 0, &mut out);
    out.sort();
    out
}

fn permute(items: &mut Vec<usize>, at: usize, out: &mut Vec<Vec<usize>>) {
    if at == items.len() {
        out.push(items.clone());
        return;
    }
    for i in at..items.len() {
        items.swap(at, i);
        permute(items, at + 1, out);
        items.swap(at, i);
    }
}

/// A weighted distribution over training task sequences, guaranteed not to
/// contain the held-out target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub tasks: Vec<TaskSpec>,
    pub weights: Vec<f64>,
    pub target: TaskSpec,
}

impl TaskDistribution {
    pub fn new(tasks: Vec<TaskSpec>, weights: Vec<f64>, target: TaskSpec) -> Result<Self> {
        if tasks.is_empty() || tasks.len() != weights.len() {
            return Err(Error::InvalidArgument(
                "task distribution needs matching non-empty tasks and weights".into(),
            ));
        }
        if tasks.iter().any(|t| t == &target) {
            return Err(Error::InvalidArgument(format!(
                "target sequence {:?} must not appear in the training distribution",
                target.sequence
            )));
        }
        Ok(Self {
            tasks,
            weights,
            target,
        })
    }

    /// All permutations except the target, uniformly weighted. Covers every
    /// ordered station transition, so skills recombine on the target task.
    pub fn uniform_excluding(target: TaskSpec) -> Self {
        let tasks: Vec<TaskSpec> = all_permutations()
            .into_iter()
            .map(|sequence| TaskSpec { sequence })
            .filter(|t| t != &target)
            .collect();
        let weights = vec![1.0; tasks.len()];
        Self {
            tasks,
            weights,
            target,
        }
    }

    /// Four rotations of `[0, 1, 2, 3]` with the first rotation dominant.
    /// Each non-empty completed-set determines the next station uniquely,
    /// so observations predict skills well — used for prior-accuracy
    /// evaluations.
    pub fn focused(target: TaskSpec) -> Result<Self> {
        let rotations: Vec<TaskSpec> = (0..N_STATIONS)
            .map(|r| TaskSpec {
                sequence: (0..N_STATIONS).map(|i| (i + r) % N_STATIONS).collect(),
            })
            .collect();
        Self::new(rotations, vec![0.55, 0.15, 0.15, 0.15], target)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &TaskSpec {
        let total: f64 = self.weights.iter().sum();
        let mut draw = rng.gen::<f64>() * total;
        for (task, &w) in self.tasks.iter().zip(self.weights.iter()) {
            draw -= w;
            if draw <= 0.0 {
                return task;
            }
        }
        self.tasks.last().expect("non-empty")
    }
}

/// The four primitive archetypes; station `m` uses archetype `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Archetype {
    /// Straight approach to a staging point, then push through.
    Push,
    /// Approach, dwell, then retreat back out.
    Pull,
    /// Orbit half-way around the station before settling.
    Turn,
    /// Approach a lateral point, then slide in sideways.
    Slide,
}

impl Archetype {
    pub fn for_station(station: usize) -> Self {
        match station % N_STATIONS {
            0 => Archetype::Push,
            1 => Archetype::Pull,
            2 => Archetype::Turn,
            _ => Archetype::Slide,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationWorld {
    pub config: StationWorldConfig,
    task: TaskSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    flags: [bool; N_STATIONS],
    next_idx: usize,
    dwell_counter: usize,
    steps: usize,
    done: bool,
}

impl StationWorld {
    pub fn new(config: StationWorldConfig) -> Self {
        Self {
            config,
            task: TaskSpec::default_target(),
            pos: [0.0; 2],
            vel: [0.0; 2],
            flags: [false; N_STATIONS],
            next_idx: 0,
            dwell_counter: 0,
            steps: 0,
            done: false,
        }
    }

    /// Places the robot at the canonical start with small seeded jitter and
    /// clears all completion flags.
    pub fn reset(&mut self, task: &TaskSpec, seed: u64) -> Array1<f32> {
        let mut rng = rng_from_seed(seed);
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let radius = self.config.start_jitter * rng.gen::<f64>().sqrt();
        self.task = task.clone();
        self.pos = [radius * angle.cos(), radius * angle.sin()];
        self.vel = [0.0; 2];
        self.flags = [false; N_STATIONS];
        self.next_idx = 0;
        self.dwell_counter = 0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    pub fn observation(&self) -> Array1<f32> {
        let mut obs = Array1::zeros(OBS_DIM);
        obs[0] = self.pos[0] as f32;
        obs[1] = self.pos[1] as f32;
        obs[2] = self.vel[0] as f32;
        obs[3] = self.vel[1] as f32;
        for (i, &f) in self.flags.iter().enumerate() {
            obs[4 + i] = if f { 1.0 } else { 0.0 };
        }
        for (i, sp) in STATION_POSITIONS.iter().enumerate() {
            obs[4 + N_STATIONS + 2 * i] = sp[0] as f32;
            obs[4 + N_STATIONS + 2 * i + 1] = sp[1] as f32;
        }
        obs
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.vel
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn completed(&self) -> usize {
        self.next_idx
    }

    /// Advances the dynamics one step: damped velocity with bounded
    /// acceleration, walls that absorb momentum, and sparse subtask rewards.
    pub fn step(&mut self, action: [f64; 2]) -> Result<(Array1<f32>, f64, bool)> {
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        self.vel[0] = self.config.velocity_decay * self.vel[0] + self.config.acceleration_gain * ax;
        self.vel[1] = self.config.velocity_decay * self.vel[1] + self.config.acceleration_gain * ay;
        let b = self.config.world_bound;
        for axis in 0..2 {
            self.pos[axis] += self.vel[axis];
            if self.pos[axis] < -b {
                self.pos[axis] = -b;
                self.vel[axis] = 0.0;
            } else if self.pos[axis] > b {
                self.pos[axis] = b;
                self.vel[axis] = 0.0;
            }
        }
        self.steps += 1;
        let mut reward = 0.0;
        if self.next_idx < N_STATIONS {
            let station = self.task.sequence[self.next_idx];
            let sp = STATION_POSITIONS[station];
            let dx = self.pos[0] - sp[0];
            let dy = self.pos[1] - sp[1];
            if (dx * dx + dy * dy).sqrt() <= self.config.activation_radius {
                self.dwell_counter += 1;
            } else {
                self.dwell_counter = 0;
            }
            if self.dwell_counter >= self.config.dwell_steps {
                self.flags[station] = true;
                self.next_idx += 1;
                self.dwell_counter = 0;
                reward = 1.0;
            }
        }
        if self.next_idx == N_STATIONS || self.steps >= self.config.episode_cap {
            self.done = true;
        }
        Ok((self.observation(), reward, self.done))
    }

    /// Rasterizes the scene to a 64x64 RGB frame: stations as colored
    /// squares (bright when complete), robot as a white dot.
    pub fn render_image(&self) -> Array3<u8> {
        let size = 64usize;
        let mut img = Array3::zeros((size, size, 3));
        let to_px = |x: f64| -> isize {
            (((x + self.config.world_bound) / (2.0 * self.config.world_bound)) * (size as f64 - 1.0))
                .round() as isize
        };
        let colors: [[u8; 3]; N_STATIONS] =
            [[200, 60, 60], [60, 200, 60], [60, 60, 200], [200, 180, 40]];
        for (i, sp) in STATION_POSITIONS.iter().enumerate() {
            let cx = to_px(sp[0]);
            let cy = to_px(sp[1]);
            let scale = if self.flags[i] { 1.0 } else { 0.45 };
            for dy in -3..=3isize {
                for dx in -3..=3isize {
                    let (x, y) = (cx + dx, cy + dy);
                    if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                        for c in 0..3 {
                            img[[y as usize, x as usize, c]] =
                                (colors[i][c] as f64 * scale) as u8;
                        }
                    }
                }
            }
        }
        let rx = to_px(self.pos[0]);
        let ry = to_px(self.pos[1]);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (x, y) = (rx + dx, ry + dy);
                if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                    for c in 0..3 {
                        img[[y as usize, x as usize, c]] = 255;
                    }
                }
            }
        }
        img
    }
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

fn unit_toward(from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    let d = [to[0] - from[0], to[1] - from[1]];
    let n = norm(d).max(1e-9);
    [d[0] / n, d[1] / n]
}

/// Plan for one primitive: a series of waypoint legs with a dwell phase at
/// the station, distinct in shape per archetype.
struct PrimitivePlan {
    station: usize,
    waypoints: Vec<[f64; 2]>,
    /// Index of the waypoint after which the dwell happens.
    dwell_after: usize,
    dwell_len: usize,
    // progress bookkeeping
    leg: usize,
    leg_initial_dist: f64,
    dwell_done: usize,
    kp: f64,
    kd: f64,
    waypoint_tol: f64,
}

impl PrimitivePlan {
    fn new(archetype: Archetype, station: usize, from: [f64; 2]) -> Self {
        let sp = STATION_POSITIONS[station];
        let inward = unit_toward(sp, [0.0, 0.0]);
        let lateral = [-inward[1], inward[0]];
        let (waypoints, dwell_after): (Vec<[f64; 2]>, usize) = match archetype {
            Archetype::Push => {
                let staging = [sp[0] + 0.42 * inward[0], sp[1] + 0.42 * inward[1]];
                (vec![staging, sp], 1)
            }
            Archetype::Pull => {
                let out = [sp[0] + 0.38 * inward[0], sp[1] + 0.38 * inward[1]];
                // Dwell at the station, then retreat.
                (vec![sp, out], 0)
            }
            Archetype::Turn => {
                let r = 0.32;
                let start_angle = {
                    let d = [from[0] - sp[0], from[1] - sp[1]];
                    d[1].atan2(d[0])
                };
                let mut wps = Vec::new();
                for i in 1..=4 {
                    let a = start_angle + std::f64::consts::PI * i as f64 / 4.0;
                    wps.push([sp[0] + r * a.cos(), sp[1] + r * a.sin()]);
                }
                wps.push(sp);
                let n = wps.len();
                (wps, n - 1)
            }
            Archetype::Slide => {
                let side = [sp[0] + 0.42 * lateral[0], sp[1] + 0.42 * lateral[1]];
                (vec![side, sp], 1)
            }
        };
        let leg_initial_dist = norm([waypoints[0][0] - from[0], waypoints[0][1] - from[1]]);
        Self {
            station,
            waypoints,
            dwell_after,
            dwell_len: 8,
            leg: 0,
            leg_initial_dist,
            dwell_done: 0,
            kp: 6.0,
            kd: 8.0,
            waypoint_tol: 0.10,
        }
    }

    fn in_dwell(&self) -> bool {
        self.leg > self.dwell_after && self.dwell_done < self.dwell_len
    }

    fn complete(&self) -> bool {
        self.leg >= self.waypoints.len() && self.dwell_done >= self.dwell_len
    }

    /// Total plan units for progress reporting: one per waypoint leg plus
    /// one for the dwell.
    fn total_units(&self) -> f64 {
        self.waypoints.len() as f64 + 1.0
    }

    fn progress(&self, pos: [f64; 2]) -> f64 {
        let mut units = self.leg as f64;
        if self.in_dwell() || (self.leg > self.dwell_after && self.dwell_done >= self.dwell_len) {
            units += self.dwell_done as f64 / self.dwell_len as f64;
        } else if self.leg < self.waypoints.len() {
            let wp = self.waypoints[self.leg];
            let dist = norm([wp[0] - pos[0], wp[1] - pos[1]]);
            if self.leg_initial_dist > 1e-9 {
                units += (1.0 - dist / self.leg_initial_dist).clamp(0.0, 1.0);
            }
        }
        (units / self.total_units()).clamp(0.0, 1.0)
    }

    /// PD control toward the current target; advances waypoint and dwell
    /// bookkeeping from the *current* position.
    fn control(&mut self, pos: [f64; 2], vel: [f64; 2]) -> [f64; 2] {
        // Advance past reached waypoints.
        while self.leg < self.waypoints.len() {
            let wp = self.waypoints[self.leg];
            let dist = norm([wp[0] - pos[0], wp[1] - pos[1]]);
            let tol = if self.leg < self.dwell_after {
                self.waypoint_tol + 0.04
            } else {
                self.waypoint_tol
            };
            if dist < tol {
                // On reaching the dwell waypoint, hold; the dwell counter is
                // advanced by `note_step`.
                if self.leg == self.dwell_after && self.dwell_done < self.dwell_len {
                    break;
                }
                self.leg += 1;
                if self.leg < self.waypoints.len() {
                    let next = self.waypoints[self.leg];
                    self.leg_initial_dist = norm([next[0] - pos[0], next[1] - pos[1]]);
                }
            } else {
                break;
            }
        }
        let target = if self.leg < self.waypoints.len() {
            self.waypoints[self.leg]
        } else {
            STATION_POSITIONS[self.station]
        };
        [
            (self.kp * (target[0] - pos[0]) - self.kd * vel[0]).clamp(-1.0, 1.0),
            (self.kp * (target[1] - pos[1]) - self.kd * vel[1]).clamp(-1.0, 1.0),
        ]
    }

    /// Called after the environment stepped; advances dwell bookkeeping.
    fn note_step(&mut self, pos: [f64; 2]) {
        if self.leg == self.dwell_after {
            let wp = self.waypoints[self.leg];
            if norm([wp[0] - pos[0], wp[1] - pos[1]]) < self.waypoint_tol {
                self.dwell_done += 1;
                if self.dwell_done >= self.dwell_len {
                    self.leg += 1;
                    if self.leg < self.waypoints.len() {
                        self.leg_initial_dist = norm([
                            self.waypoints[self.leg][0] - pos[0],
                            self.waypoints[self.leg][1] - pos[1],
                        ]);
                    }
                }
            } else {
                self.dwell_done = 0;
            }
        }
    }
}

/// Settings for scripted demonstration generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoConfig {
    pub n_demos: usize,
    pub seed: u64,
    /// Attach the task sequence (scaled to [0,1]) as a context vector.
    pub attach_context: bool,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            // Mirrors the pre-training dataset size of the reference
            // protocol; tests use far fewer.
            n_demos: 601,
            seed: 0,
            attach_context: false,
        }
    }
}

/// Rolls out scripted primitives for each sampled training task and records
/// trajectories with behavior descriptors and ground-truth primitive labels.
/// Every demo must finish its 4 subtasks (return 4) or generation fails.
pub fn generate_demos(
    env_config: &StationWorldConfig,
    distribution: &TaskDistribution,
    demo_config: &DemoConfig,
) -> Result<DatasetArchive> {
    let mut trajectories = Vec::with_capacity(demo_config.n_demos);
    let mut task_rng = rng_from_seed(crate::rng::derive_seed(demo_config.seed, "tasks"));
    for i in 0..demo_config.n_demos {
        let task = distribution.sample(&mut task_rng).clone();
        debug_assert_ne!(task, distribution.target);
        let mut env = StationWorld::new(env_config.clone());
        let ep_seed = derive_seed_indexed(demo_config.seed, "demo", i as u64);
        let first_obs = env.reset(&task, ep_seed);

        let mut flat_obs: Vec<Array1<f32>> = vec![first_obs];
        let mut images: Vec<Array3<u8>> = if env_config.image_observations {
            vec![env.render_image()]
        } else {
            Vec::new()
        };
        let mut actions: Vec<[f64; 2]> = Vec::new();
        let mut descriptors: Vec<[f32; DESCRIPTOR_DIM]> = vec![[0.0; DESCRIPTOR_DIM]];
        let mut gt: Vec<i32> = vec![-1];
        let mut total_reward = 0.0;

        for &station in &task.sequence {
            let archetype = Archetype::for_station(station);
            let mut plan = PrimitivePlan::new(archetype, station, env.position());
            let mut guard = 0usize;
            let completed_before = env.completed();
            loop {
                let action = plan.control(env.position(), env.velocity());
                actions.push(action);
                let (obs, reward, done) = env.step(action)?;
                total_reward += reward;
                plan.note_step(env.position());
                let sp = STATION_POSITIONS[station];
                let mut desc = [0.0f32; DESCRIPTOR_DIM];
                desc[station] = 1.0;
                desc[N_STATIONS] = plan.progress(env.position()) as f32;
                desc[N_STATIONS + 1] = sp[0] as f32;
                desc[N_STATIONS + 2] = sp[1] as f32;
                flat_obs.push(obs);
                if env_config.image_observations {
                    images.push(env.render_image());
                }
                descriptors.push(desc);
                gt.push(station as i32);
                guard += 1;
                let activated = env.completed() > completed_before;
                if activated && plan.complete() {
                    break;
                }
                if done {
                    if activated {
                        // Final subtask: the episode ends at activation,
                        // cutting the plan's tail short.
                        break;
                    }
                    return Err(Error::Env(format!(
                        "demo {i}: episode ended before station {station} activated \
                         (step {})",
                        env.steps_taken()
                    )));
                }
                if guard > 120 {
                    return Err(Error::Env(format!(
                        "demo {i}: primitive at station {station} failed to complete \
                         (step {} of episode, guard {guard})",
                        env.steps_taken()
                    )));
                }
            }
        }
        if (total_reward - N_STATIONS as f64).abs() > 1e-12 {
            return Err(Error::Env(format!(
                "demo {i}: return {total_reward} != {N_STATIONS}"
            )));
        }
        // Pair observations with the actions taken from them: drop the final
        // post-action state.
        let t_len = actions.len();
        flat_obs.truncate(t_len);
        descriptors.truncate(t_len);
        gt.truncate(t_len);
        gt[0] = gt[1];

        let observations = if env_config.image_observations {
            images.truncate(t_len);
            let mut arr = Array4::zeros((t_len, 64, 64, 3));
            for (t, img) in images.iter().enumerate() {
                arr.index_axis_mut(ndarray::Axis(0), t).assign(img);
            }
            Observations::Image(arr)
        } else {
            let mut arr = Array2::zeros((t_len, OBS_DIM));
            for (t, row) in flat_obs.iter().enumerate() {
                arr.row_mut(t).assign(row);
            }
            Observations::Flat(arr)
        };
        let mut action_arr = Array2::zeros((t_len, ACT_DIM));
        for (t, a) in actions.iter().enumerate() {
            action_arr[[t, 0]] = a[0] as f32;
            action_arr[[t, 1]] = a[1] as f32;
        }
        let mut traj = Trajectory::new(format!("demo_{i:05}"), observations, action_arr);
        let mut desc_arr = Array2::zeros((t_len, DESCRIPTOR_DIM));
        for (t, d) in descriptors.iter().enumerate() {
            for (j, &v) in d.iter().enumerate() {
                desc_arr[[t, j]] = v;
            }
        }
        traj.descriptors = Some(desc_arr);
        traj.gt_labels = Some(gt);
        if demo_config.attach_context {
            traj.context = Some(Array1::from_iter(
                task.sequence.iter().map(|&s| s as f32 / (N_STATIONS - 1) as f32),
            ));
        }
        trajectories.push(traj);
    }
    let archive = DatasetArchive::new(
        trajectories,
        ArchiveMetadata {
            k: None,
            embedder: None,
            seed: Some(demo_config.seed),
        },
    );
    archive.validate()?;
    Ok(archive)
}

/// Samples a random evaluation-start variation of the target task; kept
/// simple because the target sequence itself is fixed.
pub fn shuffled_station_order<R: Rng>(rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..N_STATIONS).collect();
    order.shuffle(rng);
    order
}
