//! Launching an external SMT solver process and parsing its reply.
//!
//! The solver command is split shell-style (quotes respected), the script
//! is piped to stdin, and stdout is read back. The first recognizable
//! verdict line (`sat`, `unsat`, `unknown`) decides the outcome; after
//! `sat`, the remaining output is parsed as a `get-model` reply. Timeouts,
//! launch failures, and unrecognizable output all map to
//! [`SolverVerdict::Unknown`] with a diagnostic — never to a panic, since
//! the binary and its output are outside our control.

use std::io::{Read as _, Write as _};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::term::ConcreteValue;

use super::sexp::{parse_all, Sexp};
use super::{Model, SolverVerdict};

/// Run `cmd` with `script` on stdin and interpret the reply. The process
/// is killed once `timeout` elapses.
pub fn run_external(cmd: &str, script: &str, timeout: Duration) -> SolverVerdict {
    let tokens = split_command(cmd);
    if tokens.is_empty() {
        return SolverVerdict::Unknown("empty solver command".into());
    }
    let mut child = match Command::new(&tokens[0])
        .args(&tokens[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => {
            return SolverVerdict::Unknown(format!(
                "failed to launch solver '{}': {e}",
                tokens[0]
            ))
        }
    };

    // Feed stdin and drain both output pipes on their own threads so a
    // chatty or early-exiting solver cannot deadlock us.
    let mut stdin = child.stdin.take().expect("stdin was piped");
    let script_owned = script.to_string();
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(script_owned.as_bytes());
    });
    let mut stdout = child.stdout.take().expect("stdout was piped");
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let mut stderr = child.stderr.take().expect("stderr was piped");
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });

    let deadline = Instant::now() + timeout;
    let timed_out = loop {
        match child.try_wait() {
            Ok(Some(_)) => break false,
            Ok(None) => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    break true;
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return SolverVerdict::Unknown(format!("waiting for solver failed: {e}"));
            }
        }
    };
    if timed_out {
        // Do not join the pipe threads here: a grandchild that survived the
        // kill can hold the pipes open, and the threads exit on their own
        // once the descendants do.
        return SolverVerdict::Unknown(format!("solver timed out after {timeout:?}"));
    }
    let _ = writer.join();
    let stdout_text = out_reader.join().unwrap_or_default();
    let stderr_text = err_reader.join().unwrap_or_default();
    parse_solver_output(&stdout_text, &stderr_text)
}

/// Split a command line into tokens, honoring single quotes, double quotes
/// (with backslash escapes), and bare backslash escapes.
fn split_command(cmd: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_token = false;
    let mut chars = cmd.chars();
    while let Some(c) = chars.next() {
        match c {
            c if c.is_whitespace() => {
                if in_token {
                    out.push(std::mem::take(&mut cur));
                    in_token = false;
                }
            }
            '\'' => {
                in_token = true;
                for ch in chars.by_ref() {
                    if ch == '\'' {
                        break;
                    }
                    cur.push(ch);
                }
            }
            '"' => {
                in_token = true;
                while let Some(ch) = chars.next() {
                    match ch {
                        '"' => break,
                        '\\' => {
                            if let Some(n) = chars.next() {
                                cur.push(n);
                            }
                        }
                        _ => cur.push(ch),
                    }
                }
            }
            '\\' => {
                in_token = true;
                if let Some(n) = chars.next() {
                    cur.push(n);
                }
            }
            _ => {
                in_token = true;
                cur.push(c);
            }
        }
    }
    if in_token {
        out.push(cur);
    }
    out
}

fn preview(s: &str) -> String {
    let t = s.trim();
    let p: String = t.chars().take(300).collect();
    if p.len() < t.len() {
        format!("{p}…")
    } else {
        p
    }
}

fn parse_solver_output(stdout: &str, stderr: &str) -> SolverVerdict {
    // Scan for the verdict line, tolerating banner or warning lines above.
    let mut verdict: Option<&str> = None;
    let mut rest_start = 0;
    let mut offset = 0;
    for line in stdout.split_inclusive('\n') {
        let end = offset + line.len();
        match line.trim() {
            v @ ("sat" | "unsat" | "unknown") => {
                verdict = Some(v);
                rest_start = end;
                break;
            }
            _ => offset = end,
        }
    }
    match verdict {
        None => SolverVerdict::Unknown(format!(
            "unrecognized solver output: stdout {:?}, stderr {:?}",
            preview(stdout),
            preview(stderr)
        )),
        Some("unsat") => SolverVerdict::Unsat,
        Some("unknown") => SolverVerdict::Unknown("solver reported unknown".into()),
        Some(_) => match parse_all(&stdout[rest_start..]) {
            Err(e) => SolverVerdict::Unknown(format!(
                "sat, but the model reply did not parse: {e}"
            )),
            Ok(tops) => {
                let mut model = Model::new();
                for top in &tops {
                    collect_defs(top, &mut model);
                }
                SolverVerdict::Sat(model)
            }
        },
    }
}

/// Walk a model reply, tolerant of the common shapes: a bare
/// `(define-fun ...)`, a `(model ...)` wrapper, or an anonymous list of
/// definitions. Entries that are not zero-arity scalar definitions with a
/// `name!ordinal` symbol are skipped.
fn collect_defs(e: &Sexp, model: &mut Model) {
    let Some(es) = e.list() else { return };
    match es.first().and_then(Sexp::atom) {
        Some("define-fun") => {
            if let Some((name, ord, value)) = parse_def(es) {
                model.insert(&name, ord, value);
            }
        }
        Some("model") => {
            for item in &es[1..] {
                collect_defs(item, model);
            }
        }
        Some(_) => {}
        None => {
            for item in es {
                collect_defs(item, model);
            }
        }
    }
}

fn parse_def(es: &[Sexp]) -> Option<(String, u32, ConcreteValue)> {
    if es.len() != 5 {
        return None;
    }
    let name = es[1].atom()?;
    if !es[2].list()?.is_empty() {
        return None; // only zero-arity constants carry model values
    }
    let bang = name.rfind('!')?;
    let ord: u32 = name[bang + 1..].parse().ok()?;
    let value = parse_value(&es[4])?;
    Some((name[..bang].to_string(), ord, value))
}

fn parse_value(v: &Sexp) -> Option<ConcreteValue> {
    match v {
        Sexp::Atom(a) => match a.as_str() {
            "true" => Some(ConcreteValue::Bool(true)),
            "false" => Some(ConcreteValue::Bool(false)),
            _ => {
                if let Some(hex) = a.strip_prefix("#x") {
                    let value = u128::from_str_radix(hex, 16).ok()?;
                    Some(ConcreteValue::bv(4 * hex.len() as u32, value))
                } else if let Some(bin) = a.strip_prefix("#b") {
                    let value = u128::from_str_radix(bin, 2).ok()?;
                    Some(ConcreteValue::bv(bin.len() as u32, value))
                } else {
                    None
                }
            }
        },
        Sexp::List(es) => {
            // Decimal form: (_ bv42 8).
            if es.len() == 3 && es[0].atom() == Some("_") {
                let n = es[1].atom()?.strip_prefix("bv")?;
                let value: u128 = n.parse().ok()?;
                let width: u32 = es[2].atom()?.parse().ok()?;
                Some(ConcreteValue::bv(width, value))
            } else {
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCRIPT: &str = "(set-logic QF_BV)\n(check-sat)\n(get-model)\n";
    const LONG: Duration = Duration::from_secs(10);

    #[test]
    fn splits_commands_with_quotes_and_escapes() {
        assert_eq!(split_command("z3 -in -t:5000"), vec!["z3", "-in", "-t:5000"]);
        assert_eq!(
            split_command("sh -c 'echo unsat'"),
            vec!["sh", "-c", "echo unsat"]
        );
        assert_eq!(
            split_command(r#"run "a 'b' c" d\ e"#),
            vec!["run", "a 'b' c", "d e"]
        );
        assert_eq!(split_command("  "), Vec::<String>::new());
        assert_eq!(split_command("cmd ''"), vec!["cmd", ""]);
    }

    #[test]
    fn unsat_reply_is_recognized() {
        let v = run_external("sh -c 'cat >/dev/null; echo unsat'", SCRIPT, LONG);
        assert!(matches!(v, SolverVerdict::Unsat));
    }

    #[test]
    fn sat_reply_with_model_is_decoded() {
        let cmd = "sh -c 'cat >/dev/null; echo sat; \
                   echo \"(\"; \
                   echo \"  (define-fun |x!0| () (_ BitVec 8) #x2a)\"; \
                   echo \"  (define-fun |flag!1| () Bool true)\"; \
                   echo \"  (define-fun helper () Bool false)\"; \
                   echo \")\"'";
        match run_external(cmd, SCRIPT, LONG) {
            SolverVerdict::Sat(m) => {
                assert_eq!(m.get("x", 0), Some(&ConcreteValue::bv(8, 42)));
                assert_eq!(m.get("flag", 1), Some(&ConcreteValue::Bool(true)));
                assert_eq!(m.len(), 2, "the bang-less helper is skipped");
            }
            other => panic!("expected sat, got {other:?}"),
        }
    }

    #[test]
    fn model_wrapper_and_decimal_values_are_understood() {
        let cmd = "sh -c 'cat >/dev/null; echo sat; \
                   echo \"(model (define-fun |n!0| () (_ BitVec 8) (_ bv5 8)))\"'";
        match run_external(cmd, SCRIPT, LONG) {
            SolverVerdict::Sat(m) => {
                assert_eq!(m.get("n", 0), Some(&ConcreteValue::bv(8, 5)));
            }
            other => panic!("expected sat, got {other:?}"),
        }
    }

    #[test]
    fn sat_without_model_output_yields_an_empty_model() {
        let v = run_external("sh -c 'cat >/dev/null; echo sat'", SCRIPT, LONG);
        match v {
            SolverVerdict::Sat(m) => assert!(m.is_empty()),
            other => panic!("expected sat, got {other:?}"),
        }
    }

    #[test]
    fn unknown_reply_maps_to_unknown() {
        let v = run_external("sh -c 'cat >/dev/null; echo unknown'", SCRIPT, LONG);
        match v {
            SolverVerdict::Unknown(msg) => assert!(msg.contains("unknown")),
            other => panic!("expected unknown, got {other:?}"),
        }
    }

    #[test]
    fn garbage_output_maps_to_unknown_with_the_text() {
        let v = run_external(
            "sh -c 'cat >/dev/null; echo flagrant-error; echo details >&2'",
            SCRIPT,
            LONG,
        );
        match v {
            SolverVerdict::Unknown(msg) => {
                assert!(msg.contains("flagrant-error"), "{msg}");
                assert!(msg.contains("details"), "{msg}");
            }
            other => panic!("expected unknown, got {other:?}"),
        }
    }

    #[test]
    fn banner_lines_before_the_verdict_are_tolerated() {
        let v = run_external(
            "sh -c 'cat >/dev/null; echo \"; solver v1.2 ready\"; echo unsat'",
            SCRIPT,
            LONG,
        );
        assert!(matches!(v, SolverVerdict::Unsat));
    }

    #[test]
    fn truncated_model_output_maps_to_unknown() {
        let cmd = "sh -c 'cat >/dev/null; echo sat; echo \"((define-fun |x!0|\"'";
        match run_external(cmd, SCRIPT, LONG) {
            SolverVerdict::Unknown(msg) => assert!(msg.contains("did not parse"), "{msg}"),
            other => panic!("expected unknown, got {other:?}"),
        }
    }

    #[test]
    fn slow_solvers_are_killed_at_the_deadline() {
        let start = Instant::now();
        let v = run_external(
            "sh -c 'sleep 5; echo unsat'",
            SCRIPT,
            Duration::from_millis(200),
        );
        let elapsed = start.elapsed();
        match v {
            SolverVerdict::Unknown(msg) => assert!(msg.contains("timed out"), "{msg}"),
            other => panic!("expected timeout, got {other:?}"),
        }
        assert!(elapsed < Duration::from_secs(3), "took {elapsed:?}");
    }

    #[test]
    fn missing_binaries_fail_gracefully() {
        let v = run_external("definitely-not-a-real-solver-binary", SCRIPT, LONG);
        match v {
            SolverVerdict::Unknown(msg) => assert!(msg.contains("launch"), "{msg}"),
            other => panic!("expected unknown, got {other:?}"),
        }
    }

    #[test]
    fn empty_command_fails_gracefully() {
        let v = run_external("   ", SCRIPT, LONG);
        assert!(matches!(v, SolverVerdict::Unknown(_)));
    }

    #[test]
    fn the_script_actually_reaches_the_solver_stdin() {
        let v = run_external(
            "sh -c 'if grep -q check-sat; then echo unsat; else echo sat; fi'",
            SCRIPT,
            LONG,
        );
        assert!(matches!(v, SolverVerdict::Unsat));
    }
}
