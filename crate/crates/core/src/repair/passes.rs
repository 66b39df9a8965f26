//! The individual text-to-text repair passes. Each returns the rewritten text
//! and whether anything changed.

fn skip_ws(chars: &[char], mut i: usize) -> usize {
    while i < chars.len() && chars[i].is_whitespace() {
        i += 1;
    }
    i
}

fn starts_literal(chars: &[char], i: usize) -> bool {
    ["true", "false", "null"].iter().any(|lit| {
        let lit: Vec<char> = lit.chars().collect();
        chars.len() >= i + lit.len() && chars[i..i + lit.len()] == lit[..]
    })
}

/// Whether a quote at `i - 1` plausibly closes a string: what follows is
/// structural (`:`, `}`, `]`, end of input) or a comma leading into another
/// member or element.
fn closes_string(chars: &[char], i: usize) -> bool {
    let j = skip_ws(chars, i);
    match chars.get(j) {
        None | Some('}') | Some(']') | Some(':') => true,
        Some(',') => {
            let k = skip_ws(chars, j + 1);
            match chars.get(k) {
                None => true,
                Some(&c) => {
                    matches!(c, '"' | '\'' | '{' | '[' | '}' | ']' | '-')
                        || c.is_ascii_digit()
                        || starts_literal(chars, k)
                }
            }
        }
        _ => false,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum QuoteState {
    Outside,
    Double,
    Single,
}

/// Rewrites single-quoted keys and strings with double quotes. Apostrophes
/// inside words stay put because a single quote only closes a string when
/// structure follows it. In permissive mode a double-quoted string may also
/// be closed by a single quote in the same position.
pub(crate) fn normalize_quotes(input: &str, permissive: bool) -> (String, bool) {
    let chars: Vec<char> = input.chars().collect();
    let mut out = String::with_capacity(input.len() + 8);
    let mut state = QuoteState::Outside;
    let mut last_sig: Option<char> = None;
    let mut changed = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match state {
            QuoteState::Outside => {
                match c {
                    '"' => state = QuoteState::Double,
                    '\'' if matches!(last_sig, None | Some('{' | '[' | ',' | ':' | '"')) => {
                        out.push('"');
                        state = QuoteState::Single;
                        changed = true;
                        last_sig = Some('"');
                        i += 1;
                        continue;
                    }
                    _ => {}
                }
                out.push(c);
                if !c.is_whitespace() {
                    last_sig = Some(c);
                }
            }
            QuoteState::Double => match c {
                '\\' => {
                    out.push(c);
                    if let Some(&next) = chars.get(i + 1) {
                        out.push(next);
                        i += 1;
                    }
                }
                '"' => {
                    out.push(c);
                    state = QuoteState::Outside;
                    last_sig = Some('"');
                }
                '\'' if permissive && closes_string(&chars, i + 1) => {
                    out.push('"');
                    state = QuoteState::Outside;
                    last_sig = Some('"');
                    changed = true;
                }
                _ => out.push(c),
            },
            QuoteState::Single => match c {
                '\\' => match chars.get(i + 1) {
                    Some('\'') => {
                        out.push('\'');
                        changed = true;
                        i += 1;
                    }
                    Some(&next) => {
                        out.push('\\');
                        out.push(next);
                        i += 1;
                    }
                    None => out.push('\\'),
                },
                '"' => {
                    out.push_str("\\\"");
                    changed = true;
                }
                '\'' if closes_string(&chars, i + 1) => {
                    out.push('"');
                    state = QuoteState::Outside;
                    last_sig = Some('"');
                }
                _ => out.push(c),
            },
        }
        i += 1;
    }
    (out, changed)
}

/// Inserts a comma wherever a complete value (string, number, literal or
/// closing bracket) is directly followed by the start of another value.
/// Bare words that are not JSON literals reset the state, so text spilled
/// outside a string by a stray quote never receives commas.
pub(crate) fn insert_commas(input: &str) -> (String, bool) {
    let chars: Vec<char> = input.chars().collect();
    let mut out = String::with_capacity(input.len() + 8);
    let mut value_end: Option<usize> = None;
    let mut changed = false;
    let mut i = 0;

    let mut open_value = |out: &mut String, value_end: &mut Option<usize>| {
        if let Some(pos) = value_end.take() {
            out.insert(pos, ',');
            changed = true;
        }
    };

    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => {
                out.push(c);
                i += 1;
            }
            '"' => {
                open_value(&mut out, &mut value_end);
                out.push('"');
                i += 1;
                let mut closed = false;
                while i < chars.len() {
                    let d = chars[i];
                    out.push(d);
                    i += 1;
                    if d == '\\' {
                        if let Some(&next) = chars.get(i) {
                            out.push(next);
                            i += 1;
                        }
                    } else if d == '"' {
                        closed = true;
                        break;
                    }
                }
                value_end = closed.then_some(out.len());
            }
            '{' | '[' => {
                open_value(&mut out, &mut value_end);
                out.push(c);
                i += 1;
            }
            '}' | ']' => {
                out.push(c);
                i += 1;
                value_end = Some(out.len());
            }
            c if c == '-' || c.is_ascii_alphanumeric() => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || matches!(chars[i], '-' | '+' | '.' | '_'))
                {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let is_value = matches!(word.as_str(), "true" | "false" | "null")
                    || word.parse::<f64>().is_ok();
                if is_value {
                    open_value(&mut out, &mut value_end);
                    out.push_str(&word);
                    value_end = Some(out.len());
                } else {
                    out.push_str(&word);
                    value_end = None;
                }
            }
            _ => {
                out.push(c);
                i += 1;
                value_end = None;
            }
        }
    }
    (out, changed)
}

/// Escapes double quotes that sit inside a string value: any quote within a
/// string that is not followed by structure is treated as content.
pub(crate) fn escape_inner_quotes(input: &str) -> (String, bool) {
    let chars: Vec<char> = input.chars().collect();
    let mut out = String::with_capacity(input.len() + 8);
    let mut in_string = false;
    let mut changed = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if !in_string {
            if c == '"' {
                in_string = true;
            }
            out.push(c);
        } else if c == '\\' {
            out.push(c);
            if let Some(&next) = chars.get(i + 1) {
                out.push(next);
                i += 1;
            }
        } else if c == '"' {
            if closes_string(&chars, i + 1) {
                in_string = false;
                out.push(c);
            } else {
                out.push_str("\\\"");
                changed = true;
            }
        } else {
            out.push(c);
        }
        i += 1;
    }
    (out, changed)
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Member {
    ExpectKey,
    ExpectColon,
    ExpectValue,
    AfterValue,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Frame {
    Object(Member),
    Array,
}

fn mark_value(stack: &mut [Frame]) {
    if let Some(Frame::Object(m)) = stack.last_mut() {
        *m = match *m {
            Member::ExpectKey => Member::ExpectColon,
            _ => Member::AfterValue,
        };
    }
}

/// Closes whatever is still open at end of input: an unterminated string,
/// a dangling key or colon (completed with `null`), a trailing comma, and
/// all open brackets.
pub(crate) fn close_truncation(input: &str) -> (String, bool) {
    let mut stack: Vec<Frame> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for c in input.chars() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
                mark_value(&mut stack);
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => {
                mark_value(&mut stack);
                stack.push(Frame::Object(Member::ExpectKey));
            }
            '[' => {
                mark_value(&mut stack);
                stack.push(Frame::Array);
            }
            '}' | ']' => {
                stack.pop();
            }
            ':' => {
                if let Some(Frame::Object(m)) = stack.last_mut() {
                    *m = Member::ExpectValue;
                }
            }
            ',' => {
                if let Some(Frame::Object(m)) = stack.last_mut() {
                    *m = Member::ExpectKey;
                }
            }
            c if c.is_whitespace() => {}
            _ => {
                if let Some(Frame::Object(m @ Member::ExpectValue)) = stack.last_mut() {
                    *m = Member::AfterValue;
                }
            }
        }
    }

    if !in_string && stack.is_empty() {
        return (input.to_string(), false);
    }

    let mut out = input.to_string();
    if in_string {
        if escaped {
            out.pop();
        }
        out.push('"');
        mark_value(&mut stack);
    }
    let trimmed_len = out.trim_end().len();
    out.truncate(trimmed_len);
    if out.ends_with(',') {
        out.pop();
        if let Some(Frame::Object(m)) = stack.last_mut() {
            *m = Member::AfterValue;
        }
    }
    while let Some(frame) = stack.pop() {
        match frame {
            Frame::Object(Member::ExpectColon) => out.push_str(": null}"),
            Frame::Object(Member::ExpectValue) => out.push_str(" null}"),
            Frame::Object(_) => out.push('}'),
            Frame::Array => out.push(']'),
        }
    }
    let changed = out != input;
    (out, changed)
}
