from typing import Literal

TaskCategory = Literal['simple', 'multiple', 'parallel', 'parallel_multiple', 'irrelevance']
TypeTag = Literal['string', 'integer', 'number', 'boolean', 'array', 'object', 'enum']
StudentKind = Literal['http_chat', 'scripted_mock']
SimilarityKind = Literal['lexical', 'embedding', 'mock']
RewardMode = Literal['full', 'binary_only', 'wo_cer', 'wo_smv']
ReportFormat = Literal['json', 'markdown', 'csv']
AceRollout = Literal['first', 'all']
Component = Literal['binary', 'cer', 'smv', 'student', 'similarity', 'dataset']
Violation = Literal['missing-reason', 'missing-tool', 'duplicate-reason', 'duplicate-tool', 'order', 'extra-text']
