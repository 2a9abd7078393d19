// GENERATED from the engine's interaction tables (humantool tables).
// Do not edit by hand; tests/test_interaction_export.py keeps it in sync.

export const TABLES = {
  "ack_behaviors": [
    "augment",
    "correct",
    "critique",
    "cue",
    "explain",
    "guide",
    "prime",
    "reflect"
  ],
  "allowed_behaviors": {
    "during": [
      "approve",
      "augment",
      "critique",
      "cue",
      "elicit",
      "guide",
      "probe",
      "reflect"
    ],
    "ending": [
      "approve",
      "explain",
      "reflect"
    ],
    "error_handling": [
      "correct",
      "explain"
    ],
    "initial": [
      "configure",
      "prime"
    ]
  },
  "behavior_labels": {
    "approve": "Approval request",
    "augment": "Decision support",
    "configure": "Capture preferences",
    "correct": "Fix a misunderstanding",
    "critique": "Challenge an idea",
    "cue": "Timely hint",
    "elicit": "Draw out your thinking",
    "explain": "Clarify what happened",
    "guide": "Step-by-step guidance",
    "prime": "Set the scene",
    "probe": "Exploratory question",
    "reflect": "Revise with your input"
  },
  "behaviors": [
    "prime",
    "configure",
    "probe",
    "cue",
    "elicit",
    "augment",
    "guide",
    "explain",
    "correct",
    "critique",
    "reflect",
    "approve"
  ],
  "capability_disclosure_marker": "What I can and cannot do",
  "enforceable_guidelines": [
    "avoidance",
    "transparency"
  ],
  "events": [
    "context_established",
    "node_dispatched",
    "response_integrated",
    "refusal_received",
    "misunderstanding_detected",
    "repaired",
    "repair_abandoned",
    "all_nodes_terminal",
    "session_aborted"
  ],
  "guidelines": [
    "naturalness",
    "emotionality",
    "relationship_building",
    "transparency",
    "avoidance"
  ],
  "response_kinds": {
    "approve": "approval",
    "augment": "free_text",
    "configure": "free_text",
    "correct": "free_text",
    "critique": "free_text",
    "cue": "free_text",
    "elicit": "free_text",
    "explain": "free_text",
    "guide": "free_text",
    "prime": "free_text",
    "probe": "free_text",
    "reflect": "free_text"
  },
  "stages": [
    "initial",
    "during",
    "error_handling",
    "ending"
  ],
  "transitions": [
    {
      "event": "all_nodes_terminal",
      "next": "ending",
      "stage": "during"
    },
    {
      "event": "misunderstanding_detected",
      "next": "error_handling",
      "stage": "during"
    },
    {
      "event": "refusal_received",
      "next": "error_handling",
      "stage": "during"
    },
    {
      "event": "session_aborted",
      "next": "ending",
      "stage": "during"
    },
    {
      "event": "session_aborted",
      "next": "ending",
      "stage": "ending"
    },
    {
      "event": "repair_abandoned",
      "next": "during",
      "stage": "error_handling"
    },
    {
      "event": "repaired",
      "next": "during",
      "stage": "error_handling"
    },
    {
      "event": "session_aborted",
      "next": "ending",
      "stage": "error_handling"
    },
    {
      "event": "context_established",
      "next": "during",
      "stage": "initial"
    },
    {
      "event": "session_aborted",
      "next": "ending",
      "stage": "initial"
    }
  ],
  "version": "interaction-tables/1"
} as const;

export type InteractionTables = typeof TABLES;
