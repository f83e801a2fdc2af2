"""JSON Schemas for the /v1 wire contract.

These mirror the protocol the engine's remote client validates; both
sides of the wire are held to the same shapes, with the golden fixture
files as the concrete reference.
"""

BOX_SCHEMA = {
    "type": "object",
    "required": ["x", "y", "h", "w"],
    "properties": {
        "x": {"type": "number", "minimum": 0},
        "y": {"type": "number", "minimum": 0},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "w": {"type": "number", "exclusiveMinimum": 0},
    },
}

DETECT_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["image", "text_prompt", "box_threshold"],
    "properties": {
        "image": {"type": "string"},
        "text_prompt": {"type": "string"},
        "box_threshold": {"type": "number", "minimum": 0, "maximum": 1},
    },
    "additionalProperties": False,
}

DETECT_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["boxes"],
    "properties": {
        "boxes": {
            "type": "array",
            "items": {
                "allOf": [
                    BOX_SCHEMA,
                    {
                        "required": ["logit"],
                        "properties": {
                            "logit": {"type": "number", "minimum": 0, "maximum": 1}
                        },
                    },
                ]
            },
        }
    },
    "additionalProperties": False,
}

SEGMENT_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["image", "box"],
    "properties": {"image": {"type": "string"}, "box": BOX_SCHEMA},
    "additionalProperties": False,
}

SEGMENT_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["mask"],
    "properties": {"mask": {"type": "string"}},
    "additionalProperties": False,
}

SCORE_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["image", "prompts"],
    "properties": {
        "image": {"type": "string"},
        "prompts": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    },
    "additionalProperties": False,
}

SCORE_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["logits"],
    "properties": {"logits": {"type": "array", "items": {"type": "number"}}},
    "additionalProperties": False,
}

RESPONSE_SCHEMAS = {
    "detect": DETECT_RESPONSE_SCHEMA,
    "segment": SEGMENT_RESPONSE_SCHEMA,
    "score": SCORE_RESPONSE_SCHEMA,
}

REQUEST_SCHEMAS = {
    "detect": DETECT_REQUEST_SCHEMA,
    "segment": SEGMENT_REQUEST_SCHEMA,
    "score": SCORE_REQUEST_SCHEMA,
}
