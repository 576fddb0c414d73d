use crate::error::{Error, Result};
use crate::pipeline::task::{LabeledText, PromptTemplate, TaskSpec};

/// Line placed between example blocks and before the target block.
pub const EXAMPLE_DELIMITER: &str = "- - - - -";

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn block(task: &TaskSpec, phrase: &str) -> String {
    let answer = capitalize(&task.text_type);
    match task.prompt_template {
        PromptTemplate::A => format!(
            "Write a {} to cover all following elements\nElements: {}\n{}: \"",
            task.text_type, phrase, answer
        ),
        PromptTemplate::C => format!(
            "Show me a {} that has the following characteristics\nCharacteristics: {}\n{}: \"",
            task.text_type, phrase, answer
        ),
    }
}

/// Builds the generation prompt: each example as a filled-in block, then the
/// open block for `target_label`, all separated by [`EXAMPLE_DELIMITER`].
///
/// ```
/// use divgen::pipeline::{render_prompt, TaskSpec};
///
/// let task = TaskSpec::from_toml(r#"
/// name = "sst2"
/// text_type = "movie review"
/// labels = ["positive", "negative"]
/// target_count = 40
/// [label_phrases]
/// positive = "positive sentiment"
/// negative = "negative sentiment"
/// "#).unwrap();
/// let prompt = render_prompt(&task, "positive", &[]).unwrap();
/// assert_eq!(
///     prompt,
///     "Write a movie review to cover all following elements\nElements: positive sentiment\nMovie review: \""
/// );
/// ```
pub fn render_prompt(task: &TaskSpec, target_label: &str, examples: &[LabeledText]) -> Result<String> {
    let target_phrase = task.phrase(target_label)?;
    let mut parts = Vec::with_capacity(examples.len() + 1);
    for example in examples {
        let phrase = task
            .phrase(&example.label)
            .map_err(|_| Error::UnknownLabel(example.label.clone()))?;
        parts.push(format!("{}{}\"", block(task, phrase), example.text));
    }
    parts.push(block(task, target_phrase));
    Ok(parts.join(&format!("\n\n{EXAMPLE_DELIMITER}\n\n")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(text_type: &str, labels: &[(&str, &str)], template: PromptTemplate) -> TaskSpec {
        let mut t = TaskSpec::from_toml(&format!(
            "name = \"t\"\ntext_type = \"{text_type}\"\nlabels = [{}]\ntarget_count = 40\n[label_phrases]\n{}",
            labels.iter().map(|(l, _)| format!("\"{l}\"")).collect::<Vec<_>>().join(", "),
            labels.iter().map(|(l, p)| format!("\"{l}\" = \"{p}\"\n")).collect::<String>()
        ))
        .unwrap();
        t.prompt_template = template;
        t
    }

    #[test]
    fn prompt_a_zero_shot() {
        let t = task("movie review", &[("positive", "positive sentiment"), ("negative", "negative sentiment")], PromptTemplate::A);
        assert_eq!(
            render_prompt(&t, "positive", &[]).unwrap(),
            "Write a movie review to cover all following elements\nElements: positive sentiment\nMovie review: \""
        );
    }

    #[test]
    fn prompt_a_with_examples_matches_clickbait_layout() {
        let t = task("news headline", &[("non-clickbait", "valid news"), ("clickbait", "clickbait")], PromptTemplate::A);
        let examples = [
            LabeledText::new("Zach Johnson Wins Sony Open", "non-clickbait"),
            LabeledText::new("10 Of The Biggest Lies We Were Told In 2015", "clickbait"),
        ];
        let expected = "Write a news headline to cover all following elements\n\
Elements: valid news\n\
News headline: \"Zach Johnson Wins Sony Open\"\n\
\n\
- - - - -\n\
\n\
Write a news headline to cover all following elements\n\
Elements: clickbait\n\
News headline: \"10 Of The Biggest Lies We Were Told In 2015\"\n\
\n\
- - - - -\n\
\n\
Write a news headline to cover all following elements\n\
Elements: clickbait\n\
News headline: \"";
        assert_eq!(render_prompt(&t, "clickbait", &examples).unwrap(), expected);
    }

    #[test]
    fn prompt_c_zero_shot() {
        let t = task("sentence", &[("formal", "formal"), ("informal", "informal")], PromptTemplate::C);
        assert_eq!(
            render_prompt(&t, "formal", &[]).unwrap(),
            "Show me a sentence that has the following characteristics\nCharacteristics: formal\nSentence: \""
        );
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let t = task("sentence", &[("formal", "formal"), ("informal", "informal")], PromptTemplate::A);
        assert!(matches!(render_prompt(&t, "casual", &[]), Err(Error::UnknownLabel(_))));
        let bad = [LabeledText::new("x", "casual")];
        assert!(matches!(render_prompt(&t, "formal", &bad), Err(Error::UnknownLabel(_))));
    }
}
