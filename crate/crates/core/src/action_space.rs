//! The unified keyboard/mouse action language.
//!
//! Every action a trajectory can carry is one of `no_op`, or a compound of at
//! most one `keyPress(..)`, at most one `mouseMove(dx, dy)` and any number of
//! `mouseClick(button)` atoms with distinct buttons, joined by ` and `:
//!
//! ```text
//! atom     := "no_op" | "mouseMove(" int "," int ")" | "mouseClick(" button ")"
//!           | "keyPress(" key ("," key)* ")"
//! compound := atom (" and " atom)*
//! ```
//!
//! [`Action`] stores the canonical form directly, so structural equality is
//! exact comparison and [`Action::render`] is injective.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

/// Largest mouse delta magnitude accepted by the parser.
pub const MAX_PARSE_DELTA: i64 = 10_000;

/// The closed key registry. Position in this table is the canonical key order.
const REGISTRY: &[&str] = &[
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r", "s",
    "t", "u", "v", "w", "x", "y", "z", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "space",
    "enter", "escape", "tab", "backspace", "delete", "left.ctrl", "right.ctrl", "left.shift",
    "right.shift", "left.alt", "right.alt", "arrowup", "arrowdown", "arrowleft", "arrowright",
    "f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "f9", "f10", "f11", "f12",
];

/// Alias table applied after lowercasing. Targets must be registry names.
pub const KEY_ALIASES: &[(&str, &str)] = &[
    ("ctrl", "left.ctrl"),
    ("control", "left.ctrl"),
    ("lctrl", "left.ctrl"),
    ("rctrl", "right.ctrl"),
    ("shift", "left.shift"),
    ("lshift", "left.shift"),
    ("rshift", "right.shift"),
    ("alt", "left.alt"),
    ("lalt", "left.alt"),
    ("ralt", "right.alt"),
    ("up", "arrowup"),
    ("down", "arrowdown"),
    ("left", "arrowleft"),
    ("right", "arrowright"),
    ("esc", "escape"),
    ("return", "enter"),
    ("spacebar", "space"),
    ("del", "delete"),
];

/// A key in the canonical registry.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyId(u8);

impl KeyId {
    /// Resolve a token (case-insensitive, aliases applied) to a registry key.
    pub fn parse(token: &str) -> Option<KeyId> {
        let lower = token.trim().to_ascii_lowercase();
        let name = KEY_ALIASES
            .iter()
            .find(|(alias, _)| *alias == lower)
            .map(|(_, target)| *target)
            .unwrap_or(lower.as_str());
        REGISTRY
            .iter()
            .position(|k| *k == name)
            .map(|i| KeyId(i as u8))
    }

    pub fn name(self) -> &'static str {
        REGISTRY[self.0 as usize]
    }

    /// All registry keys in canonical order.
    pub fn all() -> impl Iterator<Item = KeyId> {
        (0..REGISTRY.len()).map(|i| KeyId(i as u8))
    }

    pub fn is_letter(self) -> bool {
        self.0 < 26
    }

    pub fn is_digit(self) -> bool {
        self.name().len() == 1 && self.name().as_bytes()[0].is_ascii_digit()
    }

    pub fn is_arrow(self) -> bool {
        self.name().starts_with("arrow")
    }
}

/// Shorthand for registry lookups of names known to exist.
///
/// Panics on names outside the registry; intended for literals.
pub fn key(name: &str) -> KeyId {
    KeyId::parse(name).unwrap_or_else(|| panic!("`{name}` is not a registry key"))
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({})", self.name())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for KeyId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for KeyId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        KeyId::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown key `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Button {
    Left,
    Right,
    Middle,
}

impl Button {
    pub const ALL: [Button; 3] = [Button::Left, Button::Right, Button::Middle];

    pub fn name(self) -> &'static str {
        match self {
            Button::Left => "left",
            Button::Right => "right",
            Button::Middle => "middle",
        }
    }

    pub fn parse(token: &str) -> Option<Button> {
        match token.trim().to_ascii_lowercase().as_str() {
            "left" => Some(Button::Left),
            "right" => Some(Button::Right),
            "middle" => Some(Button::Middle),
            _ => None,
        }
    }
}

impl fmt::Display for Button {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One atom of a compound action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Atom {
    KeyPress(BTreeSet<KeyId>),
    MouseMove { dx: i32, dy: i32 },
    MouseClick(Button),
}

impl Atom {
    fn kind(&self) -> &'static str {
        match self {
            Atom::KeyPress(_) => "keyPress",
            Atom::MouseMove { .. } => "mouseMove",
            Atom::MouseClick(_) => "mouseClick",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionError {
    #[error("keyPress requires at least one key")]
    EmptyKeyPress,
    #[error("duplicate {0} atom in compound action")]
    DuplicateAtom(&'static str),
}

/// One agent decision, stored in canonical form.
///
/// An empty action (no keys, no move, no clicks) is `no_op`.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Action {
    keys: BTreeSet<KeyId>,
    mouse_move: Option<(i32, i32)>,
    clicks: BTreeSet<Button>,
}

impl Action {
    pub fn no_op() -> Self {
        Self::default()
    }

    pub fn key_press<I: IntoIterator<Item = KeyId>>(keys: I) -> Result<Self, ActionError> {
        let keys: BTreeSet<KeyId> = keys.into_iter().collect();
        if keys.is_empty() {
            return Err(ActionError::EmptyKeyPress);
        }
        Ok(Self {
            keys,
            ..Self::default()
        })
    }

    pub fn mouse_move(dx: i32, dy: i32) -> Self {
        Self {
            mouse_move: Some((dx, dy)),
            ..Self::default()
        }
    }

    pub fn click(button: Button) -> Self {
        Self {
            clicks: BTreeSet::from([button]),
            ..Self::default()
        }
    }

    /// Build a compound action, rejecting duplicate atom kinds.
    pub fn compound<I: IntoIterator<Item = Atom>>(atoms: I) -> Result<Self, ActionError> {
        let mut action = Self::default();
        for atom in atoms {
            action.push_atom(atom)?;
        }
        Ok(action)
    }

    fn push_atom(&mut self, atom: Atom) -> Result<(), ActionError> {
        let kind = atom.kind();
        match atom {
            Atom::KeyPress(keys) => {
                if keys.is_empty() {
                    return Err(ActionError::EmptyKeyPress);
                }
                if !self.keys.is_empty() {
                    return Err(ActionError::DuplicateAtom(kind));
                }
                self.keys = keys;
            }
            Atom::MouseMove { dx, dy } => {
                if self.mouse_move.is_some() {
                    return Err(ActionError::DuplicateAtom(kind));
                }
                self.mouse_move = Some((dx, dy));
            }
            Atom::MouseClick(b) => {
                if !self.clicks.insert(b) {
                    return Err(ActionError::DuplicateAtom(kind));
                }
            }
        }
        Ok(())
    }

    pub fn is_no_op(&self) -> bool {
        self.keys.is_empty() && self.mouse_move.is_none() && self.clicks.is_empty()
    }

    pub fn keys(&self) -> &BTreeSet<KeyId> {
        &self.keys
    }

    pub fn mouse_delta(&self) -> Option<(i32, i32)> {
        self.mouse_move
    }

    pub fn clicks(&self) -> &BTreeSet<Button> {
        &self.clicks
    }

    /// Atoms in canonical order: keyPress, mouseMove, then clicks by button.
    pub fn atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        if !self.keys.is_empty() {
            out.push(Atom::KeyPress(self.keys.clone()));
        }
        if let Some((dx, dy)) = self.mouse_move {
            out.push(Atom::MouseMove { dx, dy });
        }
        out.extend(self.clicks.iter().copied().map(Atom::MouseClick));
        out
    }

    /// Rewrite every key through `f`. `f` must be injective on this action's keys
    /// for the key count to be preserved.
    pub fn map_keys(&self, f: impl Fn(KeyId) -> KeyId) -> Action {
        Action {
            keys: self.keys.iter().map(|k| f(*k)).collect(),
            ..self.clone()
        }
    }

    pub fn with_mouse_delta(&self, delta: Option<(i32, i32)>) -> Action {
        Action {
            mouse_move: delta,
            ..self.clone()
        }
    }

    pub fn render(&self) -> String {
        if self.is_no_op() {
            return "no_op".to_string();
        }
        let parts: Vec<String> = self
            .atoms()
            .into_iter()
            .map(|atom| match atom {
                Atom::KeyPress(keys) => {
                    let names: Vec<&str> = keys.iter().map(|k| k.name()).collect();
                    format!("keyPress({})", names.join(", "))
                }
                Atom::MouseMove { dx, dy } => format!("mouseMove({dx}, {dy})"),
                Atom::MouseClick(b) => format!("mouseClick({b})"),
            })
            .collect();
        parts.join(" and ")
    }

    pub fn parse(text: &str) -> Result<Action, ParseError> {
        Parser::new(text).parse()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl fmt::Debug for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Action({})", self.render())
    }
}

impl FromStr for Action {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::parse(s)
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Action::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Parse one step's action expression.
pub fn parse_action(text: &str) -> Result<Action, ParseError> {
    Action::parse(text)
}

pub fn render_action(action: &Action) -> String {
    action.render()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualityMode {
    /// Structural equality.
    #[default]
    Exact,
    /// Mouse moves compare by the sign of each component only.
    FuzzyMouse,
}

impl FromStr for EqualityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(EqualityMode::Exact),
            "fuzzy_mouse" | "fuzzy-mouse" => Ok(EqualityMode::FuzzyMouse),
            other => Err(format!("unknown equality mode `{other}`")),
        }
    }
}

pub fn actions_equal(a: &Action, b: &Action, mode: EqualityMode) -> bool {
    match mode {
        EqualityMode::Exact => a == b,
        EqualityMode::FuzzyMouse => {
            let sign = |d: Option<(i32, i32)>| d.map(|(x, y)| (x.signum(), y.signum()));
            a.keys == b.keys && a.clicks == b.clicks && sign(a.mouse_move) == sign(b.mouse_move)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown key `{token}` at byte {pos}")]
    UnknownKey { pos: usize, token: String },
    #[error("unknown mouse button `{token}` at byte {pos}")]
    UnknownButton { pos: usize, token: String },
    #[error("duplicate key `{key}` at byte {pos}")]
    DuplicateKey { pos: usize, key: String },
    #[error("duplicate {kind} atom at byte {pos}")]
    DuplicateAtom { pos: usize, kind: &'static str },
    #[error("no_op cannot be combined with other atoms (byte {pos})")]
    NoOpCombined { pos: usize },
    #[error("mouse delta {value} at byte {pos} outside [-{MAX_PARSE_DELTA}, {MAX_PARSE_DELTA}]")]
    DeltaOutOfRange { pos: usize, value: i64 },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::UnknownKey { pos, .. }
            | ParseError::UnknownButton { pos, .. }
            | ParseError::DuplicateKey { pos, .. }
            | ParseError::DuplicateAtom { pos, .. }
            | ParseError::NoOpCombined { pos }
            | ParseError::DeltaOutOfRange { pos, .. } => *pos,
        }
    }
}

enum Parsed {
    NoOp,
    Atom(Atom),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) -> usize {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
        self.pos - start
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            match self.peek() {
                Some(found) => self.syntax(format!("expected `{c}`, found `{found}`")),
                None => self.syntax(format!("expected `{c}`, found end of input")),
            }
        }
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !pred(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.src[start..self.pos]
    }

    fn parse(mut self) -> Result<Action, ParseError> {
        self.skip_ws();
        let mut action = Action::default();
        let mut saw_noop = false;
        let mut count = 0usize;
        loop {
            let atom_pos = self.pos;
            let parsed = self.atom()?;
            count += 1;
            match parsed {
                Parsed::NoOp => {
                    if count > 1 {
                        return Err(ParseError::NoOpCombined { pos: atom_pos });
                    }
                    saw_noop = true;
                }
                Parsed::Atom(atom) => {
                    if saw_noop {
                        return Err(ParseError::NoOpCombined { pos: atom_pos });
                    }
                    action.push_atom(atom).map_err(|e| match e {
                        ActionError::DuplicateAtom(kind) => ParseError::DuplicateAtom {
                            pos: atom_pos,
                            kind,
                        },
                        ActionError::EmptyKeyPress => ParseError::Syntax {
                            pos: atom_pos,
                            message: "empty keyPress".into(),
                        },
                    })?;
                }
            }
            let ws = self.skip_ws();
            if self.peek().is_none() {
                return Ok(action);
            }
            if ws == 0 || !self.rest().starts_with("and") {
                return self.syntax("expected ` and ` or end of input");
            }
            self.pos += 3;
            if self.skip_ws() == 0 {
                return self.syntax("expected whitespace after `and`");
            }
        }
    }

    fn atom(&mut self) -> Result<Parsed, ParseError> {
        let name_pos = self.pos;
        let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
        match name {
            "no_op" => return Ok(Parsed::NoOp),
            "keyPress" | "mouseMove" | "mouseClick" => {}
            "" => return self.syntax("expected an action atom"),
            other => {
                return Err(ParseError::Syntax {
                    pos: name_pos,
                    message: format!("unknown action `{other}`"),
                })
            }
        }
        // Rollout transcripts sometimes carry a space before the parenthesis.
        self.skip_ws();
        self.expect('(')?;
        let atom = match name {
            "keyPress" => self.key_list()?,
            "mouseMove" => {
                self.skip_ws();
                let dx = self.int()?;
                self.skip_ws();
                self.expect(',')?;
                self.skip_ws();
                let dy = self.int()?;
                Atom::MouseMove { dx, dy }
            }
            _ => {
                self.skip_ws();
                // prompt templates quote the button name
                let quote = self.peek().filter(|c| *c == '\'' || *c == '"');
                if let Some(q) = quote {
                    self.expect(q)?;
                }
                let pos = self.pos;
                let token = self.take_while(|c| c.is_ascii_alphabetic());
                if token.is_empty() {
                    return self.syntax("expected a mouse button");
                }
                let b = Button::parse(token).ok_or_else(|| ParseError::UnknownButton {
                    pos,
                    token: token.to_string(),
                })?;
                if let Some(q) = quote {
                    self.expect(q)?;
                }
                Atom::MouseClick(b)
            }
        };
        self.skip_ws();
        self.expect(')')?;
        Ok(Parsed::Atom(atom))
    }

    fn key_list(&mut self) -> Result<Atom, ParseError> {
        let mut keys = BTreeSet::new();
        loop {
            self.skip_ws();
            let pos = self.pos;
            let token = self.take_while(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_');
            if token.is_empty() {
                return self.syntax("expected a key");
            }
            let k = KeyId::parse(token).ok_or_else(|| ParseError::UnknownKey {
                pos,
                token: token.to_string(),
            })?;
            if !keys.insert(k) {
                return Err(ParseError::DuplicateKey {
                    pos,
                    key: k.name().to_string(),
                });
            }
            self.skip_ws();
            if self.peek() == Some(',') {
                self.pos += 1;
            } else {
                return Ok(Atom::KeyPress(keys));
            }
        }
    }

    fn int(&mut self) -> Result<i32, ParseError> {
        let pos = self.pos;
        let mut neg = false;
        if let Some(c @ ('-' | '+')) = self.peek() {
            neg = c == '-';
            self.pos += 1;
        }
        let digits = self.take_while(|c| c.is_ascii_digit());
        if digits.is_empty() {
            return Err(ParseError::Syntax {
                pos,
                message: "expected an integer".into(),
            });
        }
        let magnitude: i64 = digits.parse().unwrap_or(i64::MAX);
        let value = if neg { -magnitude } else { magnitude };
        if !(-MAX_PARSE_DELTA..=MAX_PARSE_DELTA).contains(&value) {
            return Err(ParseError::DeltaOutOfRange { pos, value });
        }
        Ok(value as i32)
    }
}

#[cfg(test)]
pub(crate) mod strategies {
    use super::*;
    use proptest::prelude::*;

    pub fn arb_key() -> impl Strategy<Value = KeyId> {
        (0..REGISTRY.len()).prop_map(|i| KeyId(i as u8))
    }

    pub fn arb_action() -> impl Strategy<Value = Action> {
        let keys = proptest::collection::btree_set(arb_key(), 0..4);
        let mv = proptest::option::of((-MAX_PARSE_DELTA as i32..=MAX_PARSE_DELTA as i32, -500i32..=500));
        let clicks = proptest::collection::btree_set(
            prop_oneof![Just(Button::Left), Just(Button::Right), Just(Button::Middle)],
            0..3,
        );
        (keys, mv, clicks).prop_map(|(keys, mouse_move, clicks)| Action {
            keys,
            mouse_move,
            clicks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn keys(names: &[&str]) -> Action {
        Action::key_press(names.iter().map(|n| key(n))).unwrap()
    }

    #[test]
    fn ctrl_alias_resolves_to_left_ctrl() {
        let a = parse_action("keyPress(ctrl, c)").unwrap();
        assert_eq!(a, keys(&["left.ctrl", "c"]));
        assert_eq!(a.render(), "keyPress(c, left.ctrl)");
    }

    #[test]
    fn no_op_and_zero_move_are_distinct() {
        assert!(parse_action("no_op").unwrap().is_no_op());
        let zero = parse_action("mouseMove(0, 0)").unwrap();
        assert_eq!(zero.mouse_delta(), Some((0, 0)));
        assert!(!zero.is_no_op());
    }

    #[test]
    fn quoted_button() {
        assert_eq!(parse_action("mouseClick('left')").unwrap(), Action::click(Button::Left));
        assert_eq!(parse_action("mouseClick(\"right\")").unwrap(), Action::click(Button::Right));
        assert!(parse_action("mouseClick('left)").is_err());
    }

    #[test]
    fn arrow_combination() {
        let a = parse_action("keyPress(arrowup, arrowright)").unwrap();
        assert_eq!(a, keys(&["arrowup", "arrowright"]));
    }

    #[test]
    fn whitespace_inside_parens_and_before_paren() {
        assert_eq!(parse_action("keyPress (d)").unwrap(), keys(&["d"]));
        assert_eq!(
            parse_action("  mouseMove(  -3 ,4 )  ").unwrap(),
            Action::mouse_move(-3, 4)
        );
    }

    #[test]
    fn render_examples() {
        assert_eq!(keys(&["w"]).render(), "keyPress(w)");
        let compound = Action::compound([
            Atom::MouseClick(Button::Left),
            Atom::KeyPress(BTreeSet::from([key("d")])),
        ])
        .unwrap();
        assert_eq!(compound.render(), "keyPress(d) and mouseClick(left)");
        assert_eq!(Action::no_op().render(), "no_op");
    }

    #[test]
    fn compound_is_order_insensitive() {
        let a = parse_action("mouseClick(left) and keyPress(d)").unwrap();
        let b = parse_action("keyPress(d) and mouseClick(left)").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_with_positions() {
        let err = parse_action("keyPress(w").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { pos: 10, .. }), "{err}");
        let err = parse_action("keyPress(w, banana)").unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownKey {
                pos: 12,
                token: "banana".into()
            }
        );
        let err = parse_action("keyPress(w) and keyPress(s)").unwrap_err();
        assert!(matches!(err, ParseError::DuplicateAtom { pos: 16, kind: "keyPress" }));
        let err = parse_action("no_op and keyPress(s)").unwrap_err();
        assert!(matches!(err, ParseError::NoOpCombined { pos: 10 }));
        let err = parse_action("keyPress(s) and no_op").unwrap_err();
        assert!(matches!(err, ParseError::NoOpCombined { .. }));
        let err = parse_action("mouseClick(left) and mouseClick(left)").unwrap_err();
        assert!(matches!(err, ParseError::DuplicateAtom { kind: "mouseClick", .. }));
        assert!(matches!(
            parse_action("keyPress(w, W)").unwrap_err(),
            ParseError::DuplicateKey { .. }
        ));
        assert!(matches!(
            parse_action("mouseMove(10001, 0)").unwrap_err(),
            ParseError::DeltaOutOfRange { value: 10001, .. }
        ));
        assert!(matches!(
            parse_action("mouseClick(back)").unwrap_err(),
            ParseError::UnknownButton { .. }
        ));
        assert!(parse_action("keyPress(w)and keyPress(s)").is_err());
        assert!(parse_action("keyPress()").is_err());
        assert!(parse_action("").is_err());
        assert!(parse_action("drag(1,2)").is_err());
        assert!(parse_action("no_op()").is_err());
    }

    #[test]
    fn multiple_distinct_clicks_allowed() {
        let a = parse_action("mouseClick(right) and mouseClick(left)").unwrap();
        assert_eq!(a.render(), "mouseClick(left) and mouseClick(right)");
    }

    #[test]
    fn equality_modes() {
        let a = Action::mouse_move(3, 4);
        assert!(!actions_equal(&a, &Action::mouse_move(3, 5), EqualityMode::Exact));
        assert!(actions_equal(&a, &Action::mouse_move(30, 40), EqualityMode::FuzzyMouse));
        assert!(actions_equal(&keys(&["w"]), &keys(&["w"]), EqualityMode::Exact));
    }

    #[test]
    fn fuzzy_mouse_matches_sign_enumeration() {
        // Every sign combination of two deltas: fuzzy-equal iff signs agree per axis.
        let vals = [-7, -1, 0, 1, 9];
        for &ax in &vals {
            for &ay in &vals {
                for &bx in &vals {
                    for &by in &vals {
                        let expected = (ax > 0) == (bx > 0)
                            && (ax < 0) == (bx < 0)
                            && (ay > 0) == (by > 0)
                            && (ay < 0) == (by < 0);
                        let got = actions_equal(
                            &Action::mouse_move(ax, ay),
                            &Action::mouse_move(bx, by),
                            EqualityMode::FuzzyMouse,
                        );
                        assert_eq!(got, expected, "({ax},{ay}) vs ({bx},{by})");
                    }
                }
            }
        }
        assert!(!actions_equal(
            &Action::mouse_move(1, 1),
            &Action::no_op(),
            EqualityMode::FuzzyMouse
        ));
    }

    #[test]
    fn registry_has_no_duplicates_and_aliases_resolve() {
        let mut names: Vec<&str> = REGISTRY.to_vec();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), REGISTRY.len());
        for (alias, target) in KEY_ALIASES {
            assert!(REGISTRY.contains(target), "{alias} -> {target}");
            assert!(!REGISTRY.contains(alias), "alias {alias} shadows a key");
        }
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(a in strategies::arb_action()) {
            let text = a.render();
            prop_assert_eq!(parse_action(&text).unwrap(), a);
        }

        #[test]
        fn render_is_injective(a in strategies::arb_action(), b in strategies::arb_action()) {
            prop_assert_eq!(a.render() == b.render(), a == b);
        }

        #[test]
        fn parser_never_panics(s in "\\PC{0,40}") {
            let _ = parse_action(&s);
        }
    }
}
