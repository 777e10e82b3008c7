use serde_json::{json, Value};

fn error_ref() -> Value {
    json!({"$ref": "#/components/schemas/Error"})
}

fn reply(desc: &str, schema: Value) -> Value {
    json!({"description": desc, "content": {"application/json": {"schema": schema}}})
}

fn err(desc: &str) -> Value {
    reply(desc, error_ref())
}

fn schema_ref(name: &str) -> Value {
    json!({"$ref": format!("#/components/schemas/{name}")})
}

pub fn document() -> Value {
    let num = json!({"type": "number"});
    let string = json!({"type": "string"});
    let stat = json!({
        "type": "object",
        "required": ["weight", "norm"],
        "properties": {"weight": num, "norm": num}
    });
    json!({
        "openapi": "3.0.3",
        "info": {"title": "MIRACLE inference service", "version": env!("CARGO_PKG_VERSION")},
        "paths": {
            "/predict": {"post": {
                "summary": "Generate a remark and predict risk for a demo patient id or an inline patient payload",
                "requestBody": {"required": true, "content": {"application/json": {"schema": schema_ref("PredictRequest")}}},
                "responses": {
                    "200": reply("prediction with a new session token", schema_ref("PredictResponse")),
                    "400": err("malformed JSON"),
                    "404": err("unknown patient id"),
                    "422": err("schema violation; `fields` lists the offending fields"),
                    "502": err("remark generation endpoint failed"),
                    "503": err("no model loaded")
                }
            }},
            "/intervene": {"post": {
                "summary": "Replace the session's remark and recompute the prediction from cached embeddings",
                "requestBody": {"required": true, "content": {"application/json": {"schema": schema_ref("InterveneRequest")}}},
                "responses": {
                    "200": reply("updated prediction", schema_ref("InterveneResponse")),
                    "400": err("empty edit or malformed JSON"),
                    "409": err("model has no remark channel"),
                    "410": err("session expired or unknown"),
                    "503": err("no model loaded")
                }
            }},
            "/patients": {"get": {
                "summary": "Paginated demo patient list; pages past the end are empty",
                "parameters": [
                    {"name": "page", "in": "query", "schema": {"type": "integer", "minimum": 0, "default": 0}},
                    {"name": "page_size", "in": "query", "schema": {"type": "integer", "minimum": 1, "maximum": 500, "default": 50}}
                ],
                "responses": {
                    "200": reply("one page", schema_ref("PatientPage")),
                    "404": err("no demo dataset loaded")
                }
            }},
            "/patients/{id}": {"get": {
                "parameters": [{"name": "id", "in": "path", "required": true, "schema": string}],
                "responses": {
                    "200": reply("full patient record", schema_ref("PatientDetail")),
                    "404": err("unknown patient id")
                }
            }},
            "/model/info": {"get": {
                "responses": {
                    "200": reply("configuration, checkpoint metadata and embedder name", schema_ref("ModelInfo")),
                    "503": err("no model loaded")
                }
            }},
            "/healthz": {"get": {
                "responses": {
                    "200": reply("model loaded", json!({"type": "object"})),
                    "503": reply("no model loaded", json!({"type": "object"}))
                }
            }},
            "/openapi": {"get": {"responses": {"200": reply("this document", json!({"type": "object"}))}}}
        },
        "components": {"schemas": {
            "Error": {
                "type": "object",
                "required": ["error"],
                "properties": {"error": string, "fields": {"type": "array", "items": string}}
            },
            "Patient": {
                "type": "object",
                "required": ["patient_id", "clinical", "radiomic"],
                "properties": {
                    "patient_id": string,
                    "clinical": {"type": "object", "additionalProperties": {"oneOf": [num, string]}},
                    "radiomic": {"type": "array", "items": num},
                    "label": {"type": "integer", "enum": [0, 1]}
                }
            },
            "PredictRequest": {
                "description": "Either `patient_id` of a demo patient, or `patient` holding an inline record",
                "type": "object",
                "properties": {"patient_id": string, "patient": schema_ref("Patient")}
            },
            "ChannelStat": stat,
            "ChannelSummary": {
                "type": "object",
                "required": ["fusion_weights", "clinical"],
                "properties": {
                    "fusion_weights": schema_ref("FusionWeights"),
                    "clinical": schema_ref("ChannelStat"),
                    "radiomic": {"nullable": true, "allOf": [schema_ref("ChannelStat")]},
                    "remark": {"nullable": true, "allOf": [schema_ref("ChannelStat")]}
                }
            },
            "FusionWeights": {
                "type": "object",
                "required": ["clinical", "radiomic", "remark"],
                "properties": {"clinical": num, "radiomic": num, "remark": num}
            },
            "PredictResponse": {
                "type": "object",
                "required": ["session_token", "patient_id", "probability", "mc_std", "sample_probabilities",
                             "remark_text", "remark_origin", "remark_model", "seed", "channel_summary", "session_ttl_secs"],
                "properties": {
                    "session_token": string,
                    "patient_id": string,
                    "probability": {"type": "number", "minimum": 0, "maximum": 1},
                    "mc_std": num,
                    "sample_probabilities": {"type": "array", "items": num},
                    "remark_text": string,
                    "remark_origin": {"type": "string", "enum": ["llm_generated", "clinician_edited", "stub"]},
                    "remark_model": string,
                    "seed": {"type": "integer"},
                    "channel_summary": schema_ref("ChannelSummary"),
                    "session_ttl_secs": num
                }
            },
            "InterveneRequest": {
                "type": "object",
                "required": ["session_token", "edited_remark"],
                "properties": {"session_token": string, "edited_remark": string}
            },
            "InterveneResponse": {
                "type": "object",
                "required": ["session_token", "patient_id", "probability", "mc_std", "previous_probability",
                             "delta_vs_previous", "remark_text"],
                "properties": {
                    "session_token": string,
                    "patient_id": string,
                    "probability": num,
                    "mc_std": num,
                    "previous_probability": num,
                    "delta_vs_previous": {"type": "number", "description": "probability minus previous_probability"},
                    "remark_text": string
                }
            },
            "PatientSummary": {
                "type": "object",
                "properties": {"patient_id": string, "split": string, "label": {"type": "integer"}}
            },
            "PatientPage": {
                "type": "object",
                "required": ["page", "page_size", "total", "patients"],
                "properties": {
                    "page": {"type": "integer"},
                    "page_size": {"type": "integer"},
                    "total": {"type": "integer"},
                    "patients": {"type": "array", "items": schema_ref("PatientSummary")}
                }
            },
            "PatientDetail": {"allOf": [schema_ref("Patient"), {"type": "object", "properties": {"split": string}}]},
            "ModelInfo": {
                "type": "object",
                "required": ["embedding_dim", "mc_samples", "fusion_weights", "embedder", "parameter_checksum"],
                "properties": {
                    "embedding_dim": {"type": "integer"},
                    "remark_embedding_dim": {"type": "integer"},
                    "mc_samples": {"type": "integer"},
                    "fusion_weights": schema_ref("FusionWeights"),
                    "ablation": {"type": "string", "enum": ["full", "clinical_only", "clinical_radiomic"]},
                    "embedder": string,
                    "parameter_count": {"type": "integer"},
                    "parameter_checksum": string,
                    "projection_checksum": string,
                    "checkpoint": {"type": "object"},
                    "config": {"type": "object"}
                }
            }
        }}
    })
}
