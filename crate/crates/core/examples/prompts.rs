// Closed-book and RAG prompts for both chat layouts.

use readapt::retrieval::{render_prompt, TemplateId};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let context = "Dragon Ball Z has 291 episodes";
    for template in TemplateId::ALL {
        let ctx = template.requires_context().then_some(context);
        let prompt = render_prompt(template, "How many episodes are in Dragon Ball Z", ctx)?;
        println!("[{template}]");
        for m in &prompt.messages {
            println!("  {}: {}", m.role, m.content.replace('\n', "\\n"));
        }
    }
    assert!(render_prompt(TemplateId::GmRag, "Q", None).is_err());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
