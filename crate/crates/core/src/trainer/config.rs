use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{BetaSchedule, FestGrpoOptions, ObjectiveConfig};
use crate::policy::PolicySpec;
use crate::tasks::TaskSpec;

/// Training objective on the demonstration side. The answer-only side is
/// always the clipped group-relative surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// No demonstration loss.
    #[serde(rename = "RL")]
    Rl,
    /// Group-relative surrogate on demonstration-prompt rollouts too.
    #[serde(rename = "RL-G")]
    RlG,
    /// Semi-online pairwise preference loss.
    #[serde(rename = "FEST-DPO")]
    FestDpo,
    /// Weighted SFT plus clipped negative-advantage term.
    #[serde(rename = "FEST-GRPO")]
    FestGrpo,
    /// Negative-only term with decaying weight.
    #[serde(rename = "RL-G-decaying")]
    RlGDecaying,
    /// Demonstration SFT with constant weight.
    #[serde(rename = "SFT-fixed+RL")]
    FixedSftRl,
    /// Demonstration SFT with decaying weight.
    #[serde(rename = "SFT-decaying+RL")]
    DecayingSftRl,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Rl,
        Variant::RlG,
        Variant::FestDpo,
        Variant::FestGrpo,
        Variant::RlGDecaying,
        Variant::FixedSftRl,
        Variant::DecayingSftRl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Rl => "RL",
            Variant::RlG => "RL-G",
            Variant::FestDpo => "FEST-DPO",
            Variant::FestGrpo => "FEST-GRPO",
            Variant::RlGDecaying => "RL-G-decaying",
            Variant::FixedSftRl => "SFT-fixed+RL",
            Variant::DecayingSftRl => "SFT-decaying+RL",
        }
    }

    pub fn parse(name: &str) -> Option<Variant> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(name))
    }

    /// Component toggles of the surrogate family; `None` for the variants
    /// that do not use it.
    pub fn toggles(&self) -> Option<FestGrpoOptions> {
        let t = |supervised, on_policy, decaying| {
            Some(FestGrpoOptions {
                supervised,
                on_policy,
                decaying,
            })
        };
        match self {
            Variant::Rl | Variant::RlG | Variant::FestDpo => None,
            Variant::FestGrpo => t(true, true, true),
            Variant::RlGDecaying => t(false, true, true),
            Variant::FixedSftRl => t(true, false, false),
            Variant::DecayingSftRl => t(true, false, true),
        }
    }

    /// Maps ablation toggles onto a variant. With neither term enabled the
    /// result is pure RL; on-policy without decay is plain RL-G.
    pub fn from_toggles(t: FestGrpoOptions) -> Result<Variant> {
        Ok(match (t.supervised, t.on_policy, t.decaying) {
            (false, false, _) => Variant::Rl,
            (false, true, false) => Variant::RlG,
            (false, true, true) => Variant::RlGDecaying,
            (true, false, false) => Variant::FixedSftRl,
            (true, false, true) => Variant::DecayingSftRl,
            (true, true, true) => Variant::FestGrpo,
            (true, true, false) => {
                return Err(Error::config(
                    "variant",
                    "supervised + on-policy without decay is not an ablation row",
                ))
            }
        })
    }

    /// Whether demonstration-prompt rollouts enter the loss.
    pub fn uses_demo_side(&self) -> bool {
        *self != Variant::Rl
    }
}

/// Full training configuration. JSON keys mirror the field names; missing
/// keys take the desk defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    /// Outer steps `T`.
    pub steps: usize,
    /// Prompts per dataset side per step `B`.
    pub batch_prompts: usize,
    /// Rollouts per gradient step `B_mini`, split evenly across both sides.
    pub minibatch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Minibatches whose pre-clip gradient norm exceeds this are skipped.
    pub max_grad_norm_discard: f64,
    pub train_temperature: f64,
    pub eval_temperature: f64,
    pub objective: ObjectiveConfig,
    pub policy: PolicySpec,
    pub task: TaskSpec,
    pub n_expert: usize,
    pub n_answer_only: usize,
    pub n_eval: usize,
    pub eval_k: usize,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Record real wall time in the log instead of 0.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_variant(Variant::FestDpo)
    }
}

impl TrainConfig {
    /// Desk-scale defaults for a variant.
    pub fn for_variant(variant: Variant) -> Self {
        let mut objective = ObjectiveConfig::default();
        match variant {
            Variant::Rl => objective.coeff = 0.0,
            Variant::FestDpo => {
                objective.coeff = DESK_FEST_DPO_COEFF;
                objective.betas = BetaSchedule::FEST_DPO;
            }
            _ => {
                objective.coeff = 1.0;
                objective.betas = BetaSchedule::FEST_GRPO;
            }
        }
        Self {
            variant,
            seed: 0,
            steps: 300,
            batch_prompts: 16,
            minibatch: 64,
            lr_start: 0.05,
            lr_end: 0.025,
            weight_decay: 0.01,
            grad_clip: 1.0,
            max_grad_norm_discard: 80.0,
            train_temperature: 1.0,
            eval_temperature: 0.6,
            objective,
            policy: PolicySpec::default(),
            task: desk_task(),
            n_expert: 16,
            n_answer_only: 256,
            n_eval: 200,
            eval_k: 8,
            checkpoint_every: 0,
            log_wall_time: false,
        }
    }

    /// Same run with another variant; everything else, including the seed
    /// and the objective settings, is left untouched.
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn rollouts(&self) -> usize {
        self.objective.group_size
    }

    /// Minibatches per step, `2 B N / B_mini`.
    pub fn minibatches_per_step(&self) -> usize {
        2 * self.batch_prompts * self.rollouts() / self.minibatch
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.task.validate().map_err(|e| Error::config("task", e.to_string()))?;
        let pos = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        pos("steps", self.steps)?;
        pos("batch_prompts", self.batch_prompts)?;
        pos("minibatch", self.minibatch)?;
        pos("n_expert", self.n_expert)?;
        pos("n_answer_only", self.n_answer_only)?;
        pos("n_eval", self.n_eval)?;
        pos("eval_k", self.eval_k)?;
        let total = 2 * self.batch_prompts * self.rollouts();
        if self.minibatch % 2 != 0 || total % self.minibatch != 0 {
            return Err(Error::config(
                "minibatch",
                format!("must be even and divide 2 * batch_prompts * group_size = {total}"),
            ));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return Err(Error::config("lr_start", "need lr_start >= lr_end > 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be a finite non-negative real"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("grad_clip", "must be positive"));
        }
        if !(self.max_grad_norm_discard > 0.0) {
            return Err(Error::config("max_grad_norm_discard", "must be positive"));
        }
        for (field, t) in [
            ("train_temperature", self.train_temperature),
            ("eval_temperature", self.eval_temperature),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config(field, "must be a positive finite real"));
            }
        }
        if self.task.max_response_len() > self.objective.norm_len {
            return Err(Error::config(
                "objective.norm_len",
                format!(
                    "longest correct response has {} tokens but the normalizer is {}",
                    self.task.max_response_len(),
                    self.objective.norm_len
                ),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text, None)
    }

    /// Layers a JSON config over the defaults of its variant. `variant`, when
    /// given, replaces the file's choice before defaults are picked. The
    /// `objective` table merges key by key; other keys replace wholesale.
    pub fn from_json_with(text: &str, variant: Option<Variant>) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::config("config", e.to_string());
        let user: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let serde_json::Value::Object(mut user) = user else {
            return Err(Error::config("config", "top level must be an object"));
        };
        let variant = match (variant, user.get("variant")) {
            (Some(v), _) => v,
            (None, Some(v)) => serde_json::from_value(v.clone()).map_err(bad)?,
            (None, None) => Variant::FestDpo,
        };
        user.insert("variant".into(), serde_json::to_value(variant)?);
        let mut base = serde_json::to_value(Self::for_variant(variant))?;
        let serde_json::Value::Object(fields) = &mut base else { unreachable!() };
        for (key, value) in user {
            match (fields.get_mut(&key), value) {
                (Some(serde_json::Value::Object(dst)), serde_json::Value::Object(src)) if key == "objective" => {
                    merge(dst, src)
                }
                (_, v) => {
                    fields.insert(key, v);
                }
            }
        }
        let cfg: TrainConfig = serde_json::from_value(base).map_err(bad)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(dst: &mut serde_json::Map<String, serde_json::Value>, src: serde_json::Map<String, serde_json::Value>) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(serde_json::Value::Object(d)), serde_json::Value::Object(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

/// Desk-scale demonstration weight for the pairwise variant. The preference
/// gradient on tiny policies is only a few times larger than the group
/// surrogate, so the large-model value would silence it.
pub const DESK_FEST_DPO_COEFF: f64 = 1.0;

/// SUMMOD with short easy answers and a hard tail.
pub fn desk_task() -> TaskSpec {
    TaskSpec::summod(10, vec![1, 2]).with_hard(vec![5, 6], 0.5)
}

/// The six component combinations: RL, RL-G, RL-G with decaying weight,
/// fixed-weight SFT plus RL, decaying-weight SFT plus RL, and the full
/// method. Only the variant differs between entries.
pub fn ablation_matrix(base: &TrainConfig) -> Vec<TrainConfig> {
    [
        Variant::Rl,
        Variant::RlG,
        Variant::RlGDecaying,
        Variant::FixedSftRl,
        Variant::DecayingSftRl,
        Variant::FestGrpo,
    ]
    .into_iter()
    .map(|v| base.with_variant(v))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for v in Variant::ALL {
            TrainConfig::for_variant(v).validate().unwrap();
        }
        let c = TrainConfig::for_variant(Variant::FestDpo);
        assert_eq!(c.minibatches_per_step(), 4);
        assert_eq!(c.objective.betas, BetaSchedule::FEST_DPO);
        assert_eq!(TrainConfig::for_variant(Variant::FestGrpo).objective.coeff, 1.0);
        assert_eq!(TrainConfig::for_variant(Variant::Rl).objective.coeff, 0.0);
    }

    #[test]
    fn rejects_indivisible_minibatch() {
        let mut c = TrainConfig::default();
        c.minibatch = 48;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "minibatch"));
        c.minibatch = 64;
        c.lr_end = c.lr_start * 2.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = TrainConfig::for_variant(Variant::RlG);
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), c);
        assert!(TrainConfig::from_json(r#"{"variant":"RL","stepz":3}"#).is_err());
        let partial = TrainConfig::from_json(r#"{"variant":"RL","steps":3}"#).unwrap();
        assert_eq!(partial.steps, 3);
        assert_eq!(partial.objective.coeff, 0.0);
    }

    #[test]
    fn layered_json_keeps_variant_defaults() {
        let c = TrainConfig::from_json(r#"{"variant":"FEST-GRPO","objective":{"clip":{"high":0.25}}}"#).unwrap();
        assert_eq!(c.objective.betas, BetaSchedule::FEST_GRPO);
        assert_eq!(c.objective.clip.high, 0.25);
        assert_eq!(c.objective.clip.low, 0.2);
        let o = TrainConfig::from_json_with(r#"{"variant":"FEST-GRPO"}"#, Some(Variant::Rl)).unwrap();
        assert_eq!(o.variant, Variant::Rl);
        assert_eq!(o.objective.coeff, 0.0);
        assert!(TrainConfig::from_json(r#"{"objective":{"cofe":1}}"#).is_err());
    }

    #[test]
    fn toggle_mapping() {
        let t = |s, o, d| FestGrpoOptions {
            supervised: s,
            on_policy: o,
            decaying: d,
        };
        assert_eq!(Variant::from_toggles(t(false, false, false)).unwrap(), Variant::Rl);
        assert_eq!(Variant::from_toggles(t(true, true, true)).unwrap(), Variant::FestGrpo);
        for v in Variant::ALL {
            if let Some(tg) = v.toggles() {
                assert_eq!(Variant::from_toggles(tg).unwrap(), v);
            }
        }
        assert!(Variant::from_toggles(t(true, true, false)).is_err());
    }

    #[test]
    fn ablation_has_six_rows_differing_only_by_variant() {
        let base = TrainConfig::for_variant(Variant::FestGrpo);
        let rows = ablation_matrix(&base);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].variant, Variant::Rl);
        assert_eq!(rows[5], base);
        for r in &rows {
            assert_eq!(r.with_variant(base.variant), base);
        }
    }
}
