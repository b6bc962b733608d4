"""main層のテストパッケージ"""
