//! Reproduction prompts and response parsing.

use super::{HeuristicCandidate, Lineage, NativeId, Payload, Task};
use crate::error::{Error, Result};

const CROSSOVER_TEMPLATE: &str = r#"template_program = '''
def crossover(parents,  M):
    """
    Design a crossover function to be used in the genetic algorithm.
    Args:
     parents: 2D integer Numpy array of shape (n_parents, n).
     M: Number of output populations.
    Returns:
    offspring: 2D integer Numpy array of shape (M, n).
    """
'''
task_description = "Design a crossover function for a genetic algorithm. The function performs a genetic crossover function on parents to generate multiple offspring.""#;

const MUTATION_TEMPLATE: &str = r#"template_program = '''
def mutation(population, N):
    """
    Design a mutation function to be used in the genetic algorithm.
    Args:
        population: Numpy array of shape (p, n).
        N: The largest integer for the population is N-1.
    Returns:
        mutated_population: Numpy array of shape (p, n).
    """
'''
task_description = "Design a mutation function for a genetic algorithm.  The function modifies a given 2D population array parents to ensure exploration of the genetic algorithm.""#;

const SELECTOR_TEMPLATE: &str = r#"template_program = '''
def select_ports(K,n,N,Pt,B,H,noise_power):
    """
   Select n out of N ports to maximize the average objective value of B communications channels.

    Args:
        K: The number of users.
        n: The number of ports to be selected.
        N: Total number of ports available.
        Pt: Total transmit power available.
        b: Total number of channel realizations.
        H: Numpy array of shape (B,N,K). It denotes B channel realizations.
        noise_power: Noise power.
    Returns:
        port_sample: Numpy array of shape (B, n). For each row of it, all values should be integers from 0 to N-1 and cannot be repeated.

    For the n-th channel realization H(n), suppose port is a valid port selection solution, and then the effective channel becomes h_n = H[n,port,:]. The objective value will be calculated using the pre-defined function f_n=sinr_balancing(n, K, h_n, Pt, noise_power).
    """
'''
task_description = "Implement a function that selects a subset of ports for each channel realization to maximize the average SINR of B communications channels.""#;

/// Programme template for a task, verbatim.
pub fn template(task: Task) -> &'static str {
    match task {
        Task::CrossoverOp => CROSSOVER_TEMPLATE,
        Task::MutationOp => MUTATION_TEMPLATE,
        Task::FullPortSelector => SELECTOR_TEMPLATE,
    }
}

/// Signature line the generated function must reproduce.
pub fn signature(task: Task) -> &'static str {
    match task {
        Task::CrossoverOp => "def crossover(parents,  M)",
        Task::MutationOp => "def mutation(population, N)",
        Task::FullPortSelector => "def select_ports(K,n,N,Pt,B,H,noise_power)",
    }
}

fn returns(task: Task) -> &'static str {
    match task {
        Task::CrossoverOp => "offspring",
        Task::MutationOp => "mutated_population",
        Task::FullPortSelector => "port_sample",
    }
}

fn render_payload(payload: &Payload) -> String {
    match payload {
        Payload::GuestSource(src) => format!("```python\n{}\n```", src.trim_end_matches('\n')),
        Payload::Native(id) => format!("```native\n{}\n```", id.as_str()),
    }
}

/// Builds the reproduction prompt: the task template, then the parents (if
/// any), then the instruction block. Zero parents yields the
/// initialization prompt.
pub fn build_prompt(task: Task, parents: &[&HeuristicCandidate]) -> String {
    let mut out = String::new();
    out.push_str("I'm designing a heuristic for port selection in a multiuser fluid antenna system. ");
    out.push_str("The goal is to maximize the balanced (max-min) SINR of the selected ports.\n\n");
    out.push_str(template(task));
    out.push_str("\n\n");

    match parents.len() {
        0 => {
            out.push_str("Please generate a diverse set of initial strategies. Propose one of them.\n");
            out.push_str("1. Describe your new heuristic in one sentence.\n");
        }
        k => {
            out.push_str(if k == 1 {
                "Here is an existing heuristic:\n"
            } else {
                "Here are two existing heuristics:\n"
            });
            for (i, p) in parents.iter().enumerate() {
                out.push_str(&format!("No.{} Heuristic description: {}\n", i + 1, p.idea_text));
                out.push_str(&render_payload(&p.payload));
                out.push('\n');
            }
            out.push_str(if k == 1 {
                "Suggest a modification to this heuristic to improve its performance.\n"
            } else {
                "Design a new heuristic inspired by, but different from, the ones provided.\n"
            });
            out.push_str("1. Identify the common idea behind the provided heuristics.\n");
            out.push_str("2. Describe your new heuristic in one sentence.\n");
        }
    }
    let step = if parents.is_empty() { 2 } else { 3 };
    out.push_str(&format!(
        "{step}. Implement it in a Python function `{}` that returns the `{}`.\n",
        signature(task),
        returns(task)
    ));
    out
}

fn fence_info(line: &str) -> Option<&str> {
    line.trim_start().strip_prefix("```").map(str::trim)
}

/// Extracts the first fenced code block of a provider response.
///
/// The idea text is the last nonempty line before the fence. A block
/// tagged `native` must name a built-in heuristic.
pub fn parse_response(raw: &str, id: String, lineage: Lineage) -> Result<HeuristicCandidate> {
    let lines: Vec<&str> = raw.lines().collect();
    let open = lines
        .iter()
        .position(|l| fence_info(l).is_some())
        .ok_or_else(|| Error::Parse("response contains no fenced code block".into()))?;
    let info = fence_info(lines[open]).unwrap_or_default().to_string();
    let close = lines[open + 1..]
        .iter()
        .position(|l| l.trim() == "```")
        .map(|i| open + 1 + i)
        .ok_or_else(|| Error::Parse("unterminated code block".into()))?;
    let body = lines[open + 1..close].join("\n");
    if body.trim().is_empty() {
        return Err(Error::Parse("empty code block".into()));
    }

    let idea_text = lines[..open]
        .iter()
        .rev()
        .map(|l| l.trim())
        .find(|l| !l.is_empty())
        .unwrap_or_default()
        .to_string();

    let payload = if info == "native" {
        Payload::Native(body.trim().parse::<NativeId>()?)
    } else {
        Payload::GuestSource(body)
    };
    Ok(HeuristicCandidate::new(id, idea_text, payload, lineage))
}
