//! Prompt templates for assertion generation.

/// Bumped whenever the instruction or exemplars change; part of the cache key.
pub const TEMPLATE_VERSION: &str = "assertions-v1";

pub const SYSTEM_INSTRUCTION: &str = "Given a video description, generate assertion questions and paired frames to verify important components in the description. Each description describes a transformation/transition of an object's attribute, or an object's position or background. Identify the transition object, its start and end status/place, and other objects, and ask questions to verify them. Below are three examples showing three different types of transitions. Follow these examples and generate questions for the given descriptions.";

pub const EXEMPLAR_ATTRIBUTE: &str = r#"A chameleon changing from brown to bright green.

Transition object: chameleon, start: brown, end: bright green

other objects: None

- Check "Transition Completion"

Input: Frame 1

Q: Is there a brown chameleon?

Input: Frame 16

Q: Is there a bright green chameleon?

Input: Frame 9

Q: Is there a chameleon with its color in between brown and bright green?

Input: Frame 1, 5, 9, 13, 16

Q: Has the chameleon changed color from brown to bright green?

- Check "Transition object consistency"

Input: Frame 1, 6

Q: Aside from color difference, do Frame 1 and Frame 6 show the same chameleon?

Input: Frame 1, 11

Q: Aside from color difference, do Frame 1 and Frame 11 show the same chameleon?

- Check "Other objects"

None"#;

pub const EXEMPLAR_RELATION: &str = r#"A man passing a ball from his left hand to his right hand.

Transition object: ball, start: left hand, end: right hand

other objects: man

- Check "Transition Completion"

Input: Frame 1

Q: Is there a ball on the man's left hand?

Input: Frame 16

Q: Is there a ball on the man's right hand?

Input: Frame 9

Q: Is the ball between the man's left hand and right hand?

Input: Frame 1, 5, 9, 13, 16

Q: Has the ball been passed from left hand to right hand?

- Check "Transition object consistency"

Input: Frame 1, 6

Q: Aside from position difference, do Frame 1 and Frame 6 show the same ball?

Input: Frame 1, 11

Q: Aside from position difference, do Frame 1 and Frame 11 show the same ball?

- Check "Other objects"

Input: Frame 1

Q: Is there a man with a ball in his hand in the image?

Input: Frame 1, 6, 11

Q: Do all the frames show the same man?"#;

pub const EXEMPLAR_BACKGROUND: &str = r#"A bench by a lake from foggy morning to sunny afternoon.


Transition object: background, start: foggy morning, end: sunny afternoon

Other objects: bench, lake

- Check "Transition Completion"

Input: Frame 1

Q: Is the image showing a foggy morning?

Input: Frame 16

Q: Is the image showing a sunny afternoon?

Input: Frame 9

Q: Is the image showing a mix of foggy morning and sunny afternoon?

Input: Frame 1, 5, 9, 13, 16

Q: Has the background changed from foggy morning to sunny afternoon?

- Check "Transition object consistency"

None: background is an abstract concept without a physical form

- Check "Other objects"

Input: Frame 1

Q: Is there a bench by a lake in the image?

Input: Frame 1, 6, 11

Q: Do all the frames show the same bench and a lake?"#;

pub const EXEMPLARS: [&str; 3] = [EXEMPLAR_ATTRIBUTE, EXEMPLAR_RELATION, EXEMPLAR_BACKGROUND];

/// User message: the three exemplars followed by the description to expand,
/// which always forms the final paragraph.
pub fn user_message(description: &str) -> String {
    let mut msg = String::new();
    for (i, ex) in EXEMPLARS.iter().enumerate() {
        msg.push_str(&format!("In-context exemplar {}:\n\n{ex}\n\n", i + 1));
    }
    msg.push_str("Now generate questions for this description:\n\n");
    msg.push_str(description.trim());
    msg
}
