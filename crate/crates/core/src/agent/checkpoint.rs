//! Agent checkpoints.
//!
//! ```text
//! b"CEPOAGT1"
//! str    env name                     (u32 length + UTF-8 bytes)
//! config algo u8, hidden (u32 n + u32 × n), γ, α, reward scale, τ,
//!        lr_v, lr_q, lr_pi_mu, lr_pi_sigma (f64), batch u32,
//!        cem N u32, ρ f64, T u32, s f64, δ f64, minimize u8, noise rows u32
//! spec   state dim u32, action dim u32, low f64 × A, high f64 × A, max steps u32
//! u64    completed updates
//! nets   q1, q2, v, v_target, then the policy (one net, or mean + deviation),
//!        each in the network format of `MlpNet::write_to`
//! adam   q1, q2, v, policy/mean, [deviation]
//! rng    32-byte seed, u64 stream, u128 word position
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::critic::{CriticEnsemble, TwinCritic};
use super::policy::{PolicyNets, SquashedGaussianPolicy};
use super::{Agent, AgentConfig, Algo, Optimizers};
use crate::cem::CemConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{read_f64, read_u32, AdamState, MlpNet};

const MAGIC: &[u8; 8] = b"CEPOAGT1";

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_usize<R: Read>(r: &mut R) -> Result<usize> {
    Ok(read_u32(r)? as usize)
}

fn get_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_bytes<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

impl Agent {
    /// Everything needed to continue training bit-identically.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W, env_name: &str) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, env_name.len())?;
        w.write_all(env_name.as_bytes())?;

        let c = &self.config;
        w.write_all(&[c.algo as u8])?;
        put_u32(w, c.hidden.len())?;
        for &h in &c.hidden {
            put_u32(w, h)?;
        }
        for v in [c.gamma, c.alpha, c.reward_scale, c.tau, c.lr_v, c.lr_q, c.lr_pi_mu, c.lr_pi_sigma] {
            put_f64(w, v)?;
        }
        put_u32(w, c.batch_size)?;
        put_u32(w, c.cem.sample_count)?;
        put_f64(w, c.cem.elite_density)?;
        put_u32(w, c.cem.iterations)?;
        put_f64(w, c.cem.initial_deviation)?;
        put_f64(w, c.cem.deviation_floor)?;
        w.write_all(&[u8::from(c.cem.minimize)])?;
        put_u32(w, c.cem_noise_samples)?;

        let s = &self.spec;
        put_u32(w, s.state_dim)?;
        put_u32(w, s.action_dim)?;
        for &v in s.action_low.iter().chain(&s.action_high) {
            put_f64(w, v)?;
        }
        put_u32(w, s.max_episode_steps)?;
        w.write_all(&self.updates.to_le_bytes())?;

        let cr = &self.critics;
        for net in [&cr.twin.q1, &cr.twin.q2, &cr.v, &cr.v_target] {
            net.write_to(w)?;
        }
        match self.policy.nets() {
            PolicyNets::Coupled(n) => n.write_to(w)?,
            PolicyNets::Decoupled { mean, dev } => {
                mean.write_to(w)?;
                dev.write_to(w)?;
            }
        }
        let o = &self.opt;
        for st in [&o.q1, &o.q2, &o.v, &o.pi_mu].into_iter().chain(o.pi_sigma.as_ref()) {
            st.write_to(w)?;
        }
        w.write_all(&self.rng.get_seed())?;
        w.write_all(&self.rng.get_stream().to_le_bytes())?;
        w.write_all(&self.rng.get_word_pos().to_le_bytes())?;
        Ok(())
    }

    /// Inverse of [`Agent::write_checkpoint`]; returns the agent and the
    /// environment name it was trained on.
    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Agent, String)> {
        if &get_bytes::<_, 8>(r)? != MAGIC {
            return Err(Error::Checkpoint("not an agent checkpoint".into()));
        }
        let name_len = get_usize(r)?;
        if name_len > 256 {
            return Err(Error::Checkpoint("implausible environment name length".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let env_name = String::from_utf8(name).map_err(|_| Error::Checkpoint("environment name is not UTF-8".into()))?;

        let algo = match get_u8(r)? {
            0 => Algo::Sac,
            1 => Algo::SacDpn,
            2 => Algo::SacCepo,
            other => return Err(Error::Checkpoint(format!("unknown algo tag {other}"))),
        };
        let n_hidden = get_usize(r)?;
        if n_hidden > 62 {
            return Err(Error::Checkpoint("implausible hidden layer count".into()));
        }
        let hidden = (0..n_hidden).map(|_| get_usize(r)).collect::<Result<Vec<_>>>()?;
        let mut f = [0.0; 8];
        for v in &mut f {
            *v = read_f64(r)?;
        }
        let batch_size = get_usize(r)?;
        let cem = CemConfig {
            sample_count: get_usize(r)?,
            elite_density: read_f64(r)?,
            iterations: get_usize(r)?,
            initial_deviation: read_f64(r)?,
            deviation_floor: read_f64(r)?,
            minimize: get_u8(r)? != 0,
        };
        let config = AgentConfig {
            algo,
            hidden,
            gamma: f[0],
            alpha: f[1],
            reward_scale: f[2],
            tau: f[3],
            lr_v: f[4],
            lr_q: f[5],
            lr_pi_mu: f[6],
            lr_pi_sigma: f[7],
            batch_size,
            cem,
            cem_noise_samples: get_usize(r)?,
        };

        let state_dim = get_usize(r)?;
        let action_dim = get_usize(r)?;
        if action_dim > 1024 {
            return Err(Error::Checkpoint("implausible action dimension".into()));
        }
        let action_low = (0..action_dim).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let action_high = (0..action_dim).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let spec = EnvSpec {
            state_dim,
            action_dim,
            action_low,
            action_high,
            max_episode_steps: get_usize(r)?,
        };
        let updates = u64::from_le_bytes(get_bytes(r)?);

        let q1 = MlpNet::read_from(r)?;
        let q2 = MlpNet::read_from(r)?;
        let v = MlpNet::read_from(r)?;
        let v_target = MlpNet::read_from(r)?;
        let nets = match algo {
            Algo::Sac => PolicyNets::Coupled(MlpNet::read_from(r)?),
            Algo::SacDpn | Algo::SacCepo => PolicyNets::Decoupled {
                mean: MlpNet::read_from(r)?,
                dev: MlpNet::read_from(r)?,
            },
        };
        let policy = SquashedGaussianPolicy::from_nets(nets, spec.action_low.clone(), spec.action_high.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let critics = CriticEnsemble {
            twin: TwinCritic { q1, q2 },
            v,
            v_target,
        };
        let opt = {
            let (pi_mu_params, pi_sigma_params) = match policy.nets() {
                PolicyNets::Coupled(n) => (n.params(), None),
                PolicyNets::Decoupled { mean, dev } => (mean.params(), Some(dev.params())),
            };
            Optimizers {
                q1: AdamState::read_from(r, critics.twin.q1.params())?,
                q2: AdamState::read_from(r, critics.twin.q2.params())?,
                v: AdamState::read_from(r, critics.v.params())?,
                pi_mu: AdamState::read_from(r, pi_mu_params)?,
                pi_sigma: pi_sigma_params.map(|p| AdamState::read_from(r, p)).transpose()?,
            }
        };
        let mut rng = ChaCha8Rng::from_seed(get_bytes(r)?);
        rng.set_stream(u64::from_le_bytes(get_bytes(r)?));
        rng.set_word_pos(u128::from_le_bytes(get_bytes(r)?));

        let mut agent = Agent::from_parts(config, spec, policy, critics, rng)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        agent.opt = opt;
        agent.updates = updates;
        Ok((agent, env_name))
    }
}
