"""Domain layer - Business rules and entities"""
