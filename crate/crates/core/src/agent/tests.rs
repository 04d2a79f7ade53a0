use ndarray::{array, s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::critic::state_action;
use super::*;
use crate::envs::EnvKind;
use crate::nn::{Tape, Var};
use crate::replay::Transition;

/// `Q(s, a) = value` everywhere.
struct ConstantCritic(f64);

impl SoftCritic for ConstantCritic {
    fn min_q(&self, states: ArrayView2<f64>, _: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(Array2::from_elem((states.nrows(), 1), self.0))
    }

    fn min_q_on_tape(&self, tape: &mut Tape, _: Var, actions: Var) -> Var {
        let zero = tape.scale(actions, 0.0);
        let col = tape.sum_cols(zero);
        tape.offset(col, self.0)
    }
}

/// `Q(s, a) = Σ_j w_j·a_j + c·‖a‖²`.
struct PolyCritic {
    w: f64,
    c: f64,
}

impl SoftCritic for PolyCritic {
    fn min_q(&self, _: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(actions
            .mapv(|a| self.w * a + self.c * a * a)
            .sum_axis(Axis(1))
            .insert_axis(Axis(1)))
    }

    fn min_q_on_tape(&self, tape: &mut Tape, _: Var, actions: Var) -> Var {
        let lin = tape.scale(actions, self.w);
        let sq = tape.square(actions);
        let quad = tape.scale(sq, self.c);
        let per = tape.add(lin, quad);
        tape.sum_cols(per)
    }
}

/// Decoupled policy whose mean and log-std are constant in the state.
fn constant_policy(state_dim: usize, mu: f64, log_std: f64) -> SquashedGaussianPolicy {
    let mut mean = MlpNet::zeros(&[state_dim, 4, 1]).unwrap();
    let mut dev = MlpNet::zeros(&[state_dim, 4, 1]).unwrap();
    mean.bias_mut(1).fill(mu);
    dev.bias_mut(1).fill(log_std);
    SquashedGaussianPolicy::from_nets(PolicyNets::Decoupled { mean, dev }, vec![-2.0], vec![2.0]).unwrap()
}

fn scalar_net(input: usize, bias: f64) -> MlpNet {
    let mut n = MlpNet::zeros(&[input, 4, 1]).unwrap();
    n.bias_mut(1).fill(bias);
    n
}

fn batch_of(b: usize, sd: usize, ad: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        states: standard_normal((b, sd), &mut rng),
        actions: standard_normal((b, ad), &mut rng).mapv(|x: f64| x.tanh()),
        rewards: standard_normal((b, 1), &mut rng),
        next_states: standard_normal((b, sd), &mut rng),
        dones: Array2::from_shape_fn((b, 1), |(i, _)| if i % 4 == 0 { 1.0 } else { 0.0 }),
    }
}

fn small_config(algo: Algo) -> AgentConfig {
    AgentConfig {
        hidden: vec![8, 8],
        batch_size: 8,
        cem: CemConfig {
            sample_count: 12,
            iterations: 2,
            ..CemConfig::default()
        },
        ..AgentConfig::desk(algo)
    }
}

fn filled_buffer(spec: &EnvSpec, n: usize, seed: u64) -> ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = ReplayBuffer::new(n).unwrap();
    for i in 0..n {
        buf.push(Transition {
            state: standard_normal((1, spec.state_dim), &mut rng).row(0).to_vec(),
            action: standard_normal((1, spec.action_dim), &mut rng).row(0).mapv(f64::tanh).to_vec(),
            reward: -(i as f64) * 0.01,
            next_state: standard_normal((1, spec.state_dim), &mut rng).row(0).to_vec(),
            done: i % 10 == 9,
        });
    }
    buf
}

#[test]
fn algo_names_round_trip() {
    for a in Algo::ALL {
        assert_eq!(a.to_string().parse::<Algo>().unwrap(), a);
    }
    assert!("td3".parse::<Algo>().is_err());
}

#[test]
fn config_validation() {
    assert!(AgentConfig::paper(Algo::Sac).validate().is_ok());
    assert!(AgentConfig::desk(Algo::SacCepo).validate().is_ok());
    let bad = [
        AgentConfig {
            gamma: 1.0,
            ..AgentConfig::desk(Algo::Sac)
        },
        AgentConfig {
            alpha: -0.1,
            ..AgentConfig::desk(Algo::Sac)
        },
        AgentConfig {
            tau: 1.5,
            ..AgentConfig::desk(Algo::Sac)
        },
        AgentConfig {
            batch_size: 0,
            ..AgentConfig::desk(Algo::Sac)
        },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }
}

#[test]
fn v_loss_zero_at_target() {
    let batch = batch_of(5, 2, 1, 0);
    let noise = Array2::zeros((5, 1));
    let p = constant_policy(2, 0.3, -1.0);
    let c = ConstantCritic(1.25);
    // α = 0 makes the target exactly Q = 1.25.
    let l = losses::v_loss(&batch, &scalar_net(2, 1.25), &c, &p, 0.0, &noise).unwrap();
    assert_eq!(l.value, 0.0);
    assert!(l.grads.iter().all(|g| g.iter().all(|&x| x == 0.0)));
}

#[test]
fn v_loss_hand_value() {
    let batch = batch_of(1, 2, 1, 1);
    let noise = Array2::zeros((1, 1));
    let l = losses::v_loss(&batch, &scalar_net(2, 1.0), &ConstantCritic(3.0), &constant_policy(2, 0.0, 0.0), 0.0, &noise)
        .unwrap();
    assert!((l.value - 2.0).abs() < 1e-15);
}

#[test]
fn q_targets_stop_at_termination() {
    let mut batch = batch_of(4, 2, 1, 2);
    batch.dones = array![[1.0], [0.0], [1.0], [0.0]];
    let y = losses::q_targets(&batch, &scalar_net(2, 7.0), 0.9).unwrap();
    for i in 0..4 {
        let expect = batch.rewards[[i, 0]] + if i % 2 == 0 { 0.0 } else { 0.9 * 7.0 };
        assert_eq!(y[[i, 0]], expect);
    }
}

#[test]
fn q_loss_hand_value() {
    let batch = Batch {
        states: array![[0.2, -0.1]],
        actions: array![[0.5]],
        rewards: array![[1.0]],
        next_states: array![[0.0, 0.3]],
        dones: array![[0.0]],
    };
    let q = MlpNet::zeros(&[3, 4, 1]).unwrap();
    let l = losses::q_loss_single(&batch, &q, &scalar_net(2, 2.0), 0.99).unwrap();
    assert!((l.value - 4.4402).abs() < 1e-12);
}

#[test]
fn policy_gradient_vanishes_for_constant_critic_without_entropy() {
    let batch = batch_of(6, 2, 1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = standard_normal((6, 1), &mut rng);
    let p = constant_policy(2, 0.4, -0.5);
    let l = losses::pi_mu_loss(&batch, &ConstantCritic(2.0), &p, 0.0, &noise).unwrap();
    assert!(l.grads.iter().all(|g| g.iter().all(|&x| x == 0.0)));
}

/// Gradient with respect to the output bias of the trained network.
fn output_bias_grad(l: &LossGrad) -> f64 {
    l.grads.last().unwrap()[[0, 0]]
}

#[test]
fn mean_gradient_points_toward_zero_action() {
    let batch = batch_of(4, 2, 1, 4);
    let noise = Array2::zeros((4, 1));
    let critic = PolyCritic { w: 0.0, c: -1.0 };
    for (mu, sign) in [(0.7, 1.0), (-0.7, -1.0)] {
        let l = losses::pi_mu_loss(&batch, &critic, &constant_policy(2, mu, -1.0), 0.0, &noise).unwrap();
        // Descent moves μ against the gradient, i.e. toward 0.
        assert_eq!(output_bias_grad(&l).signum(), sign);
    }
}

#[test]
fn deviation_gradient_vanishes_at_zero_noise_for_linear_critic() {
    let batch = batch_of(4, 2, 1, 5);
    let noise = Array2::zeros((4, 1));
    let l = losses::pi_sigma_loss(&batch, &PolyCritic { w: 1.5, c: 0.0 }, &constant_policy(2, 0.2, -0.5), 0.0, &noise)
        .unwrap();
    assert!(l.grads.iter().all(|g| g.iter().all(|&x| x.abs() < 1e-15)));
}

#[test]
fn entropy_bonus_widens_the_policy() {
    let batch = batch_of(64, 2, 1, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = standard_normal((64, 1), &mut rng);
    let l = losses::pi_sigma_loss(&batch, &ConstantCritic(0.0), &constant_policy(2, 0.0, -1.0), 0.5, &noise).unwrap();
    assert!(output_bias_grad(&l) < 0.0);
}

#[test]
fn deviation_loss_needs_decoupled_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = SquashedGaussianPolicy::new(PolicyMode::Coupled, 2, &[4], vec![-1.0], vec![1.0], &mut rng).unwrap();
    let batch = batch_of(2, 2, 1, 0);
    assert!(losses::pi_sigma_loss(&batch, &ConstantCritic(0.0), &p, 1.0, &Array2::zeros((2, 1))).is_err());
}

#[test]
fn imitation_examples() {
    let states = array![[0.1, 0.2], [0.3, -0.4]];
    let net = scalar_net(2, 1.0);
    let same = net.forward_batch(states.view()).unwrap();
    let l = losses::imitation_loss(&states, &same, &net).unwrap();
    assert_eq!(l.value, 0.0);
    let l = losses::imitation_loss(&states.slice(s![0..1, ..]).to_owned(), &array![[3.0]], &net).unwrap();
    assert!((l.value - 2.0).abs() < 1e-15);
    // d/db ½(b − 3)² = b − 3
    assert!((output_bias_grad(&l) + 2.0).abs() < 1e-15);
    assert!(losses::imitation_loss(&states, &array![[1.0]], &net).is_err());
}

#[test]
fn swapping_critics_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let twin = TwinCritic::new(3, 2, &[8], &mut rng).unwrap();
    let p = SquashedGaussianPolicy::new(PolicyMode::Decoupled, 3, &[8], vec![-1.0; 2], vec![1.0; 2], &mut rng).unwrap();
    let v = MlpNet::new(&[3, 8, 1], &mut rng).unwrap();
    let batch = batch_of(6, 3, 2, 7);
    let noise = standard_normal((6, 2), &mut rng);
    let sw = twin.swapped();
    assert_eq!(
        losses::v_loss(&batch, &v, &twin, &p, 0.3, &noise).unwrap(),
        losses::v_loss(&batch, &v, &sw, &p, 0.3, &noise).unwrap()
    );
    assert_eq!(
        losses::pi_mu_loss(&batch, &twin, &p, 0.3, &noise).unwrap(),
        losses::pi_mu_loss(&batch, &sw, &p, 0.3, &noise).unwrap()
    );
    assert_eq!(
        losses::pi_sigma_loss(&batch, &twin, &p, 0.3, &noise).unwrap(),
        losses::pi_sigma_loss(&batch, &sw, &p, 0.3, &noise).unwrap()
    );
}

fn assert_proportional(a: &LossGrad, b: &LossGrad, factor: f64) {
    assert!((a.value - factor * b.value).abs() <= 1e-10 * a.value.abs().max(1.0));
    for (ga, gb) in a.grads.iter().zip(&b.grads) {
        for (x, y) in ga.iter().zip(gb.iter()) {
            assert!((x - factor * y).abs() <= 1e-10 * x.abs().max(1e-8), "{x} vs {factor}·{y}");
        }
    }
}

/// Scale the output layer so the network computes `c·f(x)`.
fn scaled(net: &MlpNet, c: f64) -> MlpNet {
    let mut n = net.clone();
    let last = n.num_layers() - 1;
    n.weight_mut(last).mapv_inplace(|w| w * c);
    n.bias_mut(last).mapv_inplace(|b| b * c);
    n
}

#[test]
fn reward_scale_acts_as_inverse_temperature() {
    let c = 5.0;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let twin = TwinCritic::new(3, 1, &[8, 8], &mut rng).unwrap();
    let p = SquashedGaussianPolicy::new(PolicyMode::Decoupled, 3, &[8, 8], vec![-2.0], vec![2.0], &mut rng).unwrap();
    let v = MlpNet::new(&[3, 8, 8, 1], &mut rng).unwrap();
    let v_t = MlpNet::new(&[3, 8, 8, 1], &mut rng).unwrap();
    let batch = batch_of(16, 3, 1, 8);
    let noise = standard_normal((16, 1), &mut rng);

    // Scaled run: rewards and value functions multiplied by c, α = 1.
    let twin_c = TwinCritic {
        q1: scaled(&twin.q1, c),
        q2: scaled(&twin.q2, c),
    };
    let mut batch_c = batch.clone();
    batch_c.rewards.mapv_inplace(|r| r * c);

    // Policy loss: mean(log π − c·Q) = c·mean(log π / c − Q).
    assert_proportional(
        &losses::pi_mu_loss(&batch_c, &twin_c, &p, 1.0, &noise).unwrap(),
        &losses::pi_mu_loss(&batch, &twin, &p, 1.0 / c, &noise).unwrap(),
        c,
    );
    assert_proportional(
        &losses::pi_sigma_loss(&batch_c, &twin_c, &p, 1.0, &noise).unwrap(),
        &losses::pi_sigma_loss(&batch, &twin, &p, 1.0 / c, &noise).unwrap(),
        c,
    );
    // Squared value losses pick up c twice: once from the residual and once
    // from the scaled output layer, in the unscaled parameterization of the
    // hidden layers. Compare on the hidden-layer gradients only.
    let hidden = |l: LossGrad| LossGrad {
        value: l.value,
        grads: l.grads[..4].to_vec(),
    };
    assert_proportional(
        &hidden(losses::v_loss(&batch_c, &scaled(&v, c), &twin_c, &p, 1.0, &noise).unwrap()),
        &hidden(losses::v_loss(&batch, &v, &twin, &p, 1.0 / c, &noise).unwrap()),
        c * c,
    );
    assert_proportional(
        &hidden(losses::q_loss_single(&batch_c, &twin_c.q1, &scaled(&v_t, c), 0.99).unwrap()),
        &hidden(losses::q_loss_single(&batch, &twin.q1, &v_t, 0.99).unwrap()),
        c * c,
    );
}

fn pendulum_agent(algo: Algo, tau: f64) -> (Agent, ReplayBuffer) {
    let spec = EnvKind::Pendulum.spec();
    let cfg = AgentConfig {
        tau,
        ..small_config(algo)
    };
    let agent = Agent::new(cfg, spec.clone(), 4).unwrap();
    (agent, filled_buffer(&spec, 64, 1))
}

#[test]
fn polyak_after_every_step() {
    for algo in Algo::ALL {
        let (mut agent, buf) = pendulum_agent(algo, 0.3);
        for _ in 0..3 {
            let old = agent.critics().v_target.clone();
            agent.update_step(&buf).unwrap();
            let v = &agent.critics().v;
            for (t, (o, n)) in agent.critics().v_target.params().iter().zip(old.params().iter().zip(v.params())) {
                for (x, (a, b)) in t.iter().zip(o.iter().zip(n.iter())) {
                    assert_eq!(x.to_bits(), (0.3 * b + 0.7 * a).to_bits());
                }
            }
        }
    }
}

#[test]
fn polyak_edge_cases() {
    let (mut agent, buf) = pendulum_agent(Algo::SacDpn, 1.0);
    agent.update_step(&buf).unwrap();
    assert_eq!(agent.critics().v_target, agent.critics().v);

    let (mut agent, buf) = pendulum_agent(Algo::SacDpn, 0.0);
    let before = agent.critics().v_target.clone();
    agent.update_step(&buf).unwrap();
    assert_eq!(agent.critics().v_target, before);
    assert_ne!(agent.critics().v, before);
}

#[test]
fn failed_update_leaves_agent_untouched() {
    for algo in Algo::ALL {
        let (mut agent, _) = pendulum_agent(algo, 0.005);
        let mut batch = batch_of(8, 3, 1, 3);
        batch.rewards[[2, 0]] = f64::NAN;
        let before = agent.clone();
        assert!(agent.update_on_batch(&batch).is_err());
        assert_eq!(agent, before);
    }
}

#[test]
fn small_buffer_is_rejected() {
    let (mut agent, _) = pendulum_agent(Algo::Sac, 0.005);
    let buf = filled_buffer(agent.spec(), 4, 0);
    assert!(agent.update_step(&buf).is_err());
    assert_eq!(agent.updates(), 0);
}

#[test]
fn diagnostics_shape_per_algo() {
    for algo in Algo::ALL {
        let (mut agent, buf) = pendulum_agent(algo, 0.005);
        let d = agent.update_step(&buf).unwrap();
        assert_eq!(d.pi_sigma_loss.is_some(), algo != Algo::Sac);
        assert_eq!(d.cem_policy_error.is_some(), algo == Algo::SacCepo);
        assert!(d.v_loss.is_finite() && d.q1_loss.is_finite() && d.q2_loss.is_finite());
    }
}

#[test]
fn cepo_with_zero_iterations_is_self_imitation() {
    let spec = EnvKind::Pendulum.spec();
    let mut cfg = small_config(Algo::SacCepo);
    cfg.cem.iterations = 0;
    let mut agent = Agent::new(cfg, spec.clone(), 0).unwrap();
    let d = agent.update_step(&filled_buffer(&spec, 32, 0)).unwrap();
    assert_eq!(d.pi_mu_loss, 0.0);
    assert_eq!(d.cem_policy_error, Some(0.0));
}

#[test]
fn deviation_step_sees_updated_mean() {
    let (agent, buf) = pendulum_agent(Algo::SacDpn, 0.005);
    let mut rng = agent.rng().clone();
    let batch = buf.sample_batch(8, &mut rng).unwrap();

    let mut real = agent.clone();
    let d = real.update_step(&buf).unwrap();

    // Replay the documented order by hand on a copy.
    let mut m = agent.clone();
    let alpha = m.config.alpha;
    let n_v = standard_normal((8, 1), &mut rng);
    let v = losses::v_loss(&batch, &m.critics.v, &m.critics.twin, &m.policy, alpha, &n_v).unwrap();
    adam_step(m.critics.v.params_mut(), &v.grads, &mut m.opt.v).unwrap();
    let [q1, q2] = losses::q_loss(&batch, &m.critics.twin, &m.critics.v_target, m.config.gamma).unwrap();
    adam_step(m.critics.twin.q1.params_mut(), &q1.grads, &mut m.opt.q1).unwrap();
    adam_step(m.critics.twin.q2.params_mut(), &q2.grads, &mut m.opt.q2).unwrap();
    let n_mu = standard_normal((8, 1), &mut rng);
    let mu = losses::pi_mu_loss(&batch, &m.critics.twin, &m.policy, alpha, &n_mu).unwrap();
    adam_step(mean_net_mut(&mut m.policy).params_mut(), &mu.grads, &mut m.opt.pi_mu).unwrap();
    let n_sigma = standard_normal((8, 1), &mut rng);
    let sigma = losses::pi_sigma_loss(&batch, &m.critics.twin, &m.policy, alpha, &n_sigma).unwrap();

    assert_eq!(d.v_loss, v.value);
    assert_eq!((d.q1_loss, d.q2_loss), (q1.value, q2.value));
    assert_eq!(d.pi_mu_loss, mu.value);
    assert_eq!(d.pi_sigma_loss, Some(sigma.value));
    // Evaluated with the pre-update mean, the deviation loss differs.
    let stale = losses::pi_sigma_loss(&batch, &agent.critics.twin, &agent.policy, alpha, &n_sigma).unwrap();
    assert_ne!(stale.value, sigma.value);
}

/// Split a coupled policy into an equivalent mean network and deviation
/// network.
fn split_coupled(net: &MlpNet, a: usize) -> (MlpNet, MlpNet) {
    let last = net.num_layers() - 1;
    let mut sizes = net.layer_sizes().to_vec();
    *sizes.last_mut().unwrap() = a;
    let mut mean = MlpNet::zeros(&sizes).unwrap();
    let mut dev = MlpNet::zeros(&sizes).unwrap();
    for l in 0..last {
        for n in [&mut mean, &mut dev] {
            n.weight_mut(l).assign(net.weight(l));
            n.bias_mut(l).assign(net.bias(l));
        }
    }
    mean.weight_mut(last).assign(&net.weight(last).slice(s![0..a, ..]));
    mean.bias_mut(last).assign(&net.bias(last).slice(s![.., 0..a]));
    dev.weight_mut(last).assign(&net.weight(last).slice(s![a.., ..]));
    dev.bias_mut(last).assign(&net.bias(last).slice(s![.., a..]));
    (mean, dev)
}

#[test]
fn sac_and_dpn_share_value_losses_on_first_step() {
    let spec = EnvKind::PointMass.spec();
    let sac = Agent::new(small_config(Algo::Sac), spec.clone(), 21).unwrap();
    let PolicyNets::Coupled(net) = sac.policy().nets() else { unreachable!() };
    let (mean, dev) = split_coupled(net, spec.action_dim);
    let policy =
        SquashedGaussianPolicy::from_nets(PolicyNets::Decoupled { mean, dev }, spec.action_low.clone(), spec.action_high.clone())
            .unwrap();
    let mut dpn = Agent::from_parts(
        small_config(Algo::SacDpn),
        spec.clone(),
        policy,
        sac.critics().clone(),
        sac.rng().clone(),
    )
    .unwrap();
    let mut sac = sac;
    let buf = filled_buffer(&spec, 40, 2);
    let a = sac.update_step(&buf).unwrap();
    let b = dpn.update_step(&buf).unwrap();
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
    assert!(close(a.v_loss, b.v_loss), "{} vs {}", a.v_loss, b.v_loss);
    assert_eq!(a.q1_loss, b.q1_loss);
    assert_eq!(a.q2_loss, b.q2_loss);
}

#[test]
fn checkpoint_resumes_bit_identically() {
    for algo in Algo::ALL {
        let (mut agent, buf) = pendulum_agent(algo, 0.005);
        for _ in 0..3 {
            agent.update_step(&buf).unwrap();
        }
        let mut bytes = Vec::new();
        agent.write_checkpoint(&mut bytes, "pendulum").unwrap();
        let (mut loaded, env) = Agent::read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(env, "pendulum");
        assert_eq!(loaded, agent);
        for _ in 0..3 {
            assert_eq!(agent.update_step(&buf).unwrap(), loaded.update_step(&buf).unwrap());
        }
        assert_eq!(loaded, agent);
    }
}

#[test]
fn truncated_checkpoint_is_an_error() {
    let (agent, _) = pendulum_agent(Algo::SacCepo, 0.005);
    let mut bytes = Vec::new();
    agent.write_checkpoint(&mut bytes, "pendulum").unwrap();
    for cut in [0, 5, 40, bytes.len() - 1] {
        assert!(Agent::read_checkpoint(&mut &bytes[..cut]).is_err());
    }
}

#[test]
fn acting_respects_bounds_and_determinism() {
    let (agent, _) = pendulum_agent(Algo::SacCepo, 0.005);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = [0.3, -0.2, 1.0];
    for _ in 0..50 {
        let a = agent.act(&s, &mut rng).unwrap();
        assert!(a[0] >= -2.0 && a[0] <= 2.0);
    }
    assert_eq!(agent.act_deterministic(&s).unwrap(), agent.act_deterministic(&s).unwrap());
}

#[test]
fn state_action_layout() {
    let x = state_action(array![[1.0, 2.0]].view(), array![[3.0]].view());
    assert_eq!(x, array![[1.0, 2.0, 3.0]]);
}
