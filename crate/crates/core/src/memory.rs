//! Two-tier agent memory: the last `M` steps in full, plus the thoughts of the
//! `N` steps before them. Anything older is forgotten.

use crate::policy::{ContextEntry, SummaryEntry};
use crate::trajectory::{ActionSpaceSpec, Step, Trajectory};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryParams {
    pub m: usize,
    pub n: usize,
    pub budget: usize,
    pub image_cost: usize,
    pub text_cost_divisor: usize,
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            m: 80,
            n: 2420,
            budget: 32_000,
            image_cost: 256,
            text_cost_divisor: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemoryError {
    #[error("invalid memory parameters: {0}")]
    InvalidParams(String),
    #[error("prompt needs {tokens} tokens, budget {budget} (over by {})", tokens - budget)]
    BudgetExceeded { tokens: usize, budget: usize },
    #[error("step {t} alone costs {tokens} tokens, budget {budget}")]
    StepTooLarge { t: usize, tokens: usize, budget: usize },
}

impl MemoryParams {
    pub fn validate(&self) -> Result<(), MemoryError> {
        let bad = |m: &str| Err(MemoryError::InvalidParams(m.into()));
        if self.m < 1 {
            return bad("M must be at least 1");
        }
        if self.budget <= self.image_cost {
            return bad("budget must exceed the image cost");
        }
        if self.text_cost_divisor == 0 {
            return bad("text cost divisor must be positive");
        }
        Ok(())
    }

    pub fn text_cost(&self, s: &str) -> usize {
        s.len().div_ceil(self.text_cost_divisor)
    }
}

pub fn context_entry(step: &Step) -> ContextEntry {
    ContextEntry {
        t: step.t,
        frame_id: step.frame_id,
        features: None,
        thought: step.thought.clone(),
        action: step.action.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub params: MemoryParams,
    pub context: VecDeque<ContextEntry>,
    /// (push ordinal, entry)
    summary: VecDeque<(usize, SummaryEntry)>,
    context_ordinals: VecDeque<usize>,
    pub total_steps_seen: usize,
}

impl MemoryState {
    pub fn new(params: MemoryParams) -> Result<Self, MemoryError> {
        params.validate()?;
        Ok(Self {
            params,
            context: VecDeque::new(),
            summary: VecDeque::new(),
            context_ordinals: VecDeque::new(),
            total_steps_seen: 0,
        })
    }

    pub fn summary(&self) -> impl Iterator<Item = &SummaryEntry> {
        self.summary.iter().map(|(_, e)| e)
    }

    pub fn summary_entries(&self) -> Vec<SummaryEntry> {
        self.summary().cloned().collect()
    }

    fn evict_oldest(&mut self) {
        if let (Some(entry), Some(ord)) = (self.context.pop_front(), self.context_ordinals.pop_front()) {
            if let Some(thought) = entry.thought {
                self.summary.push_back((ord, SummaryEntry { t: entry.t, thought }));
            }
        }
    }

    fn prune_summary(&mut self) {
        let horizon = self.params.m + self.params.n;
        while self
            .summary
            .front()
            .is_some_and(|(ord, _)| ord + horizon < self.total_steps_seen)
        {
            self.summary.pop_front();
        }
    }

    pub fn push_step(&mut self, entry: ContextEntry) {
        self.context.push_back(entry);
        self.context_ordinals.push_back(self.total_steps_seen);
        self.total_steps_seen += 1;
        while self.context.len() > self.params.m {
            self.evict_oldest();
        }
        self.prune_summary();
    }

    fn step_cost(&self, e: &ContextEntry) -> usize {
        let (obs, thought, action) = step_lines(e);
        let p = &self.params;
        p.image_cost + p.text_cost(&obs) + thought.map_or(0, |t| p.text_cost(&t)) + p.text_cost(&action)
    }

    /// Lay out the prompt and count its tokens.
    pub fn render_prompt(&self, instruction: &str, action_space: &ActionSpaceSpec) -> Result<PromptRender, MemoryError> {
        let budget = self.params.budget;
        for e in &self.context {
            let tokens = self.step_cost(e);
            if tokens > budget {
                return Err(MemoryError::StepTooLarge { t: e.t, tokens, budget });
            }
        }
        let render = self.render_unchecked(instruction, action_space);
        if render.token_count > budget {
            return Err(MemoryError::BudgetExceeded {
                tokens: render.token_count,
                budget,
            });
        }
        Ok(render)
    }

    pub fn render_unchecked(&self, instruction: &str, action_space: &ActionSpaceSpec) -> PromptRender {
        let mut r = Renderer {
            params: &self.params,
            out: PromptRender::default(),
        };
        r.text(&format!("Instruction: {instruction}\n"));
        r.text(&format!("Action space:\n{}\n", action_space.render()));
        r.text("Summary:\n");
        for e in self.summary() {
            r.text(&format!("[t={}] {}\n", e.t, e.thought));
        }
        r.text("Context:\n");
        for e in &self.context {
            let (obs, thought, action) = step_lines(e);
            r.image(e.frame_id);
            r.text(&obs);
            if let Some(t) = thought {
                r.text(&t);
            }
            r.text(&action);
        }
        r.out
    }

    /// Shrink the context from the oldest end until the prompt fits, pushing
    /// evicted thoughts into the summary. Returns the resulting context length,
    /// or `M` when nothing had to go.
    pub fn budget_fit(&mut self, instruction: &str, action_space: &ActionSpaceSpec) -> Result<usize, MemoryError> {
        if self.render_prompt(instruction, action_space).is_ok() {
            return Ok(self.params.m);
        }
        let mut trial = self.clone();
        loop {
            if trial.context.len() <= 1 {
                return trial.render_prompt(instruction, action_space).map(|_| 1);
            }
            trial.evict_oldest();
            trial.prune_summary();
            if trial.render_prompt(instruction, action_space).is_ok() {
                let kept = trial.context.len();
                *self = trial;
                return Ok(kept);
            }
        }
    }
}

fn step_lines(e: &ContextEntry) -> (String, Option<String>, String) {
    let obs = match &e.features {
        Some(f) => format!(" t={} {f}\n", e.t),
        None => format!(" t={}\n", e.t),
    };
    let thought = e.thought.as_ref().map(|t| format!("thought: {t}\n"));
    (obs, thought, format!("action: {}\n", e.action))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRender {
    pub text: String,
    pub token_count: usize,
}

struct Renderer<'a> {
    params: &'a MemoryParams,
    out: PromptRender,
}

impl Renderer<'_> {
    fn text(&mut self, s: &str) {
        self.out.text.push_str(s);
        self.out.token_count += self.params.text_cost(s);
    }

    fn image(&mut self, frame_id: u64) {
        self.out.text.push_str(&format!("<obs frame={frame_id}>"));
        self.out.token_count += self.params.image_cost;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryTrace {
    pub token_counts: Vec<usize>,
    pub context_len: Vec<usize>,
    pub summary_len: Vec<usize>,
    pub final_render: PromptRender,
}

/// Replay a trajectory through memory, rendering after each push.
pub fn simulate(traj: &Trajectory, params: MemoryParams) -> Result<MemoryTrace, (usize, MemoryError)> {
    let mut state = MemoryState::new(params).map_err(|e| (0, e))?;
    let mut trace = MemoryTrace::default();
    for step in &traj.steps {
        state.push_step(context_entry(step));
        let r = state
            .render_prompt(&traj.instruction, &traj.action_space)
            .map_err(|e| (step.t, e))?;
        trace.token_counts.push(r.token_count);
        trace.context_len.push(state.context.len());
        trace.summary_len.push(state.summary.len());
        trace.final_render = r;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::Action;
    use proptest::prelude::*;

    fn entry(t: usize, thought: Option<&str>) -> ContextEntry {
        ContextEntry {
            t,
            frame_id: t as u64,
            features: None,
            thought: thought.map(str::to_string),
            action: Action::no_op(),
        }
    }

    fn params(m: usize, n: usize) -> MemoryParams {
        MemoryParams {
            m,
            n,
            ..MemoryParams::default()
        }
    }

    #[test]
    fn eviction_examples() {
        let mut s = MemoryState::new(params(2, 5)).unwrap();
        s.push_step(entry(0, Some("a")));
        s.push_step(entry(1, None));
        s.push_step(entry(2, None));
        assert_eq!(s.context.iter().map(|e| e.t).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(s.summary_entries(), [SummaryEntry { t: 0, thought: "a".into() }]);
        s.push_step(entry(3, None));
        assert_eq!(s.summary_entries().len(), 1);

        let mut z = MemoryState::new(params(1, 0)).unwrap();
        for t in 0..5 {
            z.push_step(entry(t, Some("x")));
            assert_eq!(z.summary_entries(), []);
        }
    }

    #[test]
    fn param_validation() {
        assert!(MemoryState::new(params(0, 1)).is_err());
        let p = MemoryParams {
            budget: 256,
            ..MemoryParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn empty_render_is_header_only() {
        let s = MemoryState::new(MemoryParams::default()).unwrap();
        let spec = ActionSpaceSpec::minecraft();
        let r = s.render_prompt("go", &spec).unwrap();
        let header = format!("Instruction: go\nAction space:\n{}\nSummary:\nContext:\n", spec.render());
        assert_eq!(r.text, header);
        let p = MemoryParams::default();
        let cost = p.text_cost("Instruction: go\n")
            + p.text_cost(&format!("Action space:\n{}\n", spec.render()))
            + p.text_cost("Summary:\n")
            + p.text_cost("Context:\n");
        assert_eq!(r.token_count, cost);
    }

    #[test]
    fn default_headroom() {
        let p = MemoryParams::default();
        assert_eq!(p.m * p.image_cost, 20_480);
        assert!(p.m * p.image_cost <= p.budget);
    }

    #[test]
    fn budget_errors() {
        let p = MemoryParams {
            m: 4,
            n: 0,
            budget: 600,
            image_cost: 256,
            text_cost_divisor: 4,
        };
        let mut s = MemoryState::new(p).unwrap();
        let spec = ActionSpaceSpec::default();
        for t in 0..3 {
            s.push_step(entry(t, None));
        }
        match s.render_prompt("", &spec) {
            Err(MemoryError::BudgetExceeded { tokens, budget: 600 }) => assert!(tokens > 600),
            other => panic!("{other:?}"),
        }
        let mut big = MemoryState::new(p).unwrap();
        big.push_step(entry(0, Some(&"x".repeat(2000))));
        assert!(matches!(
            big.render_prompt("", &spec),
            Err(MemoryError::StepTooLarge { t: 0, .. })
        ));
        assert!(big.budget_fit("", &spec).is_err());
    }

    /// Linear-scan oracle: largest suffix of the context that renders within budget.
    fn scan_fit(s: &MemoryState, instr: &str, spec: &ActionSpaceSpec) -> Option<usize> {
        if s.render_prompt(instr, spec).is_ok() {
            return Some(s.params.m);
        }
        let mut best = None;
        for keep in 1..s.context.len() {
            let mut trial = s.clone();
            while trial.context.len() > keep {
                trial.evict_oldest();
            }
            trial.prune_summary();
            if trial.render_prompt(instr, spec).is_ok() {
                best = Some(keep);
            }
        }
        best
    }

    #[test]
    fn budget_fit_examples() {
        let spec = ActionSpaceSpec::default();
        let mut s = MemoryState::new(params(4, 4)).unwrap();
        for t in 0..6 {
            s.push_step(entry(t, None));
        }
        assert_eq!(s.budget_fit("", &spec), Ok(4));

        let p = MemoryParams {
            m: 8,
            n: 8,
            budget: 300,
            image_cost: 256,
            text_cost_divisor: 4,
        };
        let mut s = MemoryState::new(p).unwrap();
        for t in 0..8 {
            s.push_step(entry(t, None));
        }
        assert_eq!(s.budget_fit("", &spec), Ok(1));
        assert_eq!(s.context.len(), 1);
    }

    fn brute(history: &[ContextEntry], m: usize, n: usize) -> (Vec<ContextEntry>, Vec<SummaryEntry>) {
        let total = history.len();
        let ctx_start = total.saturating_sub(m);
        let sum_start = total.saturating_sub(m + n);
        let ctx = history[ctx_start..].to_vec();
        let summary = history[sum_start..ctx_start]
            .iter()
            .filter_map(|e| Some(SummaryEntry { t: e.t, thought: e.thought.clone()? }))
            .collect();
        (ctx, summary)
    }

    proptest! {
        #[test]
        fn window_identity(
            m in 1usize..8,
            n in 0usize..8,
            thoughts in proptest::collection::vec(proptest::option::of("[a-z]{1,6}"), 0..40),
        ) {
            let mut s = MemoryState::new(params(m, n)).unwrap();
            let mut history = Vec::new();
            for (t, th) in thoughts.iter().enumerate() {
                let e = entry(t, th.as_deref());
                history.push(e.clone());
                s.push_step(e);
                let (ctx, sum) = brute(&history, m, n);
                prop_assert_eq!(s.context.iter().cloned().collect::<Vec<_>>(), ctx);
                prop_assert!(s.summary_entries().len() <= n);
                prop_assert_eq!(s.summary_entries(), sum);
            }
        }

        #[test]
        fn budget_fit_matches_scan(
            sizes in proptest::collection::vec(0usize..400, 1..10),
            budget in 300usize..3000,
        ) {
            let p = MemoryParams { m: 10, n: 10, budget, image_cost: 256, text_cost_divisor: 4 };
            let mut s = MemoryState::new(p).unwrap();
            for (t, len) in sizes.iter().enumerate() {
                let th = (*len > 0).then(|| "y".repeat(*len));
                s.push_step(entry(t, th.as_deref()));
            }
            let spec = ActionSpaceSpec::default();
            let expect = scan_fit(&s, "", &spec);
            let mut fitted = s.clone();
            let got = fitted.budget_fit("", &spec).ok();
            prop_assert_eq!(got, expect);
            if got.is_some() {
                let r = fitted.render_prompt("", &spec).unwrap();
                prop_assert!(r.token_count <= budget);
            }
        }

        #[test]
        fn summary_cost_ignores_observations(obs_count in 0usize..30) {
            let mut s = MemoryState::new(params(1, 100)).unwrap();
            for t in 0..obs_count {
                s.push_step(entry(t, None));
            }
            let spec = ActionSpaceSpec::default();
            let with_ctx = s.render_unchecked("", &spec).token_count;
            let mut one = MemoryState::new(params(1, 100)).unwrap();
            if obs_count > 0 {
                one.push_step(entry(0, None));
            }
            prop_assert_eq!(with_ctx, one.render_unchecked("", &spec).token_count);
        }
    }
}
